//! Configuration, synthetic experiments and CSV reporting.

pub mod acceptance;
pub mod config;
pub mod csv_io;
pub mod noise;
pub mod scenario;
pub mod sweep;

pub use config::{ExperimentConfig, Perturbation, Plateau, ScenarioConfig};
pub use noise::GaussianNoise;
pub use scenario::{make_scenario, reference_discharge, run_scenario, Reference, Scenario};
pub use sweep::{full_sweep, reduced_sweep, Sweep};
