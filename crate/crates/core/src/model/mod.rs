//! Zero-dimensional lithium-sulfur cell model.

pub mod dynamics;
pub mod kinetics;
pub mod params;
pub mod profile;
pub mod state;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

pub use dynamics::{
    full_derivative, precipitation_rate, reduced_derivative, reduced_reconstruct, reduced_reconstruct_extended,
    RECONSTRUCT_SLACK,
};
pub use kinetics::{nernst_potentials, output_voltage, quadratic_residual, reaction_currents};
pub use params::{ModelOptions, ModelParams, OmegaReference, N_REACTIONS, N_SPECIES};
pub use profile::CurrentProfile;
pub use state::{FullState, ReducedState, ALPHA_SLACK};

use crate::error::Result;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelOrder {
    #[default]
    Full,
    Reduced,
}

impl std::fmt::Display for ModelOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelOrder::Full => "full",
            ModelOrder::Reduced => "reduced",
        })
    }
}

impl std::str::FromStr for ModelOrder {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "reduced" => Ok(Self::Reduced),
            _ => Err(crate::Error::Config {
                field: "model".into(),
                constraint: format!("must be `full` or `reduced` (got `{s}`)"),
            }),
        }
    }
}

/// A cell model in explicit state-space form over an `N`-vector.
pub trait CellModel<T: Real, const N: usize>: Sync {
    const ORDER: ModelOrder;

    fn params(&self) -> &ModelParams<T>;

    fn derivative(&self, x: &SVector<T, N>, current: T) -> Result<SVector<T, N>>;

    fn voltage(&self, x: &SVector<T, N>, current: T) -> Result<T>;

    /// Seven-state view of `x`; the reduced model reconstructs the
    /// precipitate and porosity.
    fn expand(&self, x: &SVector<T, N>) -> Result<FullState<T>>;

    /// Whether component `i` is a mass (as opposed to the porosity).
    fn is_mass(i: usize) -> bool;

    /// Whether the integrator carries component `i` as a logarithm.
    ///
    /// Dissolved masses span thirty orders of magnitude along a discharge
    /// and relax stiffly towards their equilibria; in log coordinates they
    /// stay positive and get relative accuracy.
    fn log_scaled(i: usize) -> bool;

    /// Absolute tolerance for component `i`.
    fn abs_tol(i: usize, mass_tol: T, alpha_tol: T) -> T {
        if Self::is_mass(i) {
            mass_tol
        } else {
            alpha_tol
        }
    }

    /// Strictly feasible: no reconstruction slack.
    fn admissible(&self, x: &SVector<T, N>) -> bool {
        self.expand(x).and_then(|s| s.check()).is_ok()
    }

    /// Componentwise lower and upper bounds; infinite where unbounded.
    fn bounds(&self) -> (SVector<T, N>, SVector<T, N>);

    /// Nearest point of the feasible set; the box clamp unless overridden.
    fn project(&self, x: &SVector<T, N>) -> SVector<T, N> {
        let (lo, hi) = self.bounds();
        SVector::from_fn(|i, _| x[i].max(lo[i]).min(hi[i]))
    }

    /// Any mass component at or below the floor.
    fn floor_active(&self, x: &SVector<T, N>) -> bool {
        let floor = self.params().effective_floor();
        (0..N).any(|i| Self::is_mass(i) && x[i] <= floor)
    }
}

/// Seven-state model `[m1..m5, msp, alpha]`.
#[derive(Debug, Clone, Copy)]
pub struct FullModel<'a, T> {
    pub params: &'a ModelParams<T>,
}

impl<'a, T> FullModel<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        Self { params }
    }
}

impl<T: Real> CellModel<T, 7> for FullModel<'_, T> {
    const ORDER: ModelOrder = ModelOrder::Full;

    fn params(&self) -> &ModelParams<T> {
        self.params
    }

    fn derivative(&self, x: &SVector<T, 7>, current: T) -> Result<SVector<T, 7>> {
        Ok(full_derivative(&FullState::from_vector(x), current, self.params)?.to_vector())
    }

    fn voltage(&self, x: &SVector<T, 7>, current: T) -> Result<T> {
        output_voltage(&FullState::from_vector(x), current, self.params)
    }

    fn expand(&self, x: &SVector<T, 7>) -> Result<FullState<T>> {
        Ok(FullState::from_vector(x))
    }

    fn is_mass(i: usize) -> bool {
        i < 6
    }

    /// Masses nonnegative, porosity in `[0, 1 + ALPHA_SLACK]`.
    fn bounds(&self) -> (SVector<T, 7>, SVector<T, 7>) {
        let inf = T::max_value().unwrap();
        let top = T::one() + T::lit(ALPHA_SLACK);
        let hi = SVector::<T, 7>::from_fn(|i, _| if i < 6 { inf } else { top });
        (SVector::zeros(), hi)
    }

    fn log_scaled(i: usize) -> bool {
        i < 5
    }
}

/// Five dissolved masses with a known total sulfur mass.
#[derive(Debug, Clone, Copy)]
pub struct ReducedModel<'a, T> {
    pub params: &'a ModelParams<T>,
    pub mtot: T,
    /// Continue the closure `msp = mtot - sum m` below zero instead of
    /// rejecting the state; see [`reduced_reconstruct_extended`].
    pub extended: bool,
}

impl<'a, T> ReducedModel<'a, T> {
    pub fn new(params: &'a ModelParams<T>, mtot: T) -> Self {
        Self {
            params,
            mtot,
            extended: false,
        }
    }

    pub fn extended(params: &'a ModelParams<T>, mtot: T) -> Self {
        Self {
            params,
            mtot,
            extended: true,
        }
    }
}

impl<T: Real> CellModel<T, 5> for ReducedModel<'_, T> {
    const ORDER: ModelOrder = ModelOrder::Reduced;

    fn params(&self) -> &ModelParams<T> {
        self.params
    }

    fn derivative(&self, x: &SVector<T, 5>, current: T) -> Result<SVector<T, 5>> {
        let d = full_derivative(&self.expand(x)?, current, self.params)?;
        Ok(SVector::<T, 5>::from_column_slice(&d.m))
    }

    fn voltage(&self, x: &SVector<T, 5>, current: T) -> Result<T> {
        output_voltage(&self.expand(x)?, current, self.params)
    }

    fn expand(&self, x: &SVector<T, 5>) -> Result<FullState<T>> {
        let m = [x[0], x[1], x[2], x[3], x[4]];
        let (msp, alpha) = if self.extended {
            reduced_reconstruct_extended(&m, self.mtot, self.params)?
        } else {
            reduced_reconstruct(&m, self.mtot, self.params)?
        };
        Ok(FullState { m, msp, alpha })
    }

    fn is_mass(_: usize) -> bool {
        true
    }

    fn admissible(&self, x: &SVector<T, 5>) -> bool {
        x.iter().all(|&m| m >= T::zero()) && x.sum() <= self.mtot && self.expand(x).is_ok()
    }

    /// Masses nonnegative; the total is not a box constraint.
    fn bounds(&self) -> (SVector<T, 5>, SVector<T, 5>) {
        (SVector::zeros(), SVector::repeat(T::max_value().unwrap()))
    }

    /// Clamps at zero, then scales the masses down onto `sum m = mtot` if
    /// they exceed it.
    fn project(&self, x: &SVector<T, 5>) -> SVector<T, 5> {
        let m = x.map(|v| v.max(T::zero()));
        let sum = m.sum();
        if sum > self.mtot {
            m * (self.mtot / sum)
        } else {
            m
        }
    }

    fn log_scaled(_: usize) -> bool {
        true
    }
}
