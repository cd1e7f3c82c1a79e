//! Lithium-sulfur cell model with observability analysis and constrained
//! unscented Kalman filtering of the internal species masses.
//!
//! Numerical code is generic over [`Real`]; the `*64` aliases below fix the
//! scalar to `f64`, which is what the CLI and the acceptance suite use.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelParams64 = model::ModelParams<f64>;
pub type FullState64 = model::FullState<f64>;
pub type ReducedState64 = model::ReducedState<f64>;
pub type CurrentProfile64 = model::CurrentProfile<f64>;
pub type FullTrajectory64 = integrator::Trajectory<f64, 7>;
pub type ReducedTrajectory64 = integrator::Trajectory<f64, 5>;
