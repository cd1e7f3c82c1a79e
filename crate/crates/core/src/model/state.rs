use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ModelParams, N_SPECIES};
use crate::scalar::Real;

/// Porosity may exceed 1 by this much: dissolving the initial precipitate
/// seed reopens pore volume.
pub const ALPHA_SLACK: f64 = 1e-4;

/// Seven-state vector: dissolved masses, precipitate, relative porosity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState<T> {
    pub m: [T; N_SPECIES],
    pub msp: T,
    pub alpha: T,
}

/// Five dissolved masses plus the known total sulfur mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState<T> {
    pub m: [T; N_SPECIES],
    pub mtot: T,
}

impl<T: Real> FullState<T> {
    /// Fully charged cell: `m0`, `msp0`, `alpha = 1`.
    pub fn initial(params: &ModelParams<T>) -> Self {
        Self {
            m: params.m0,
            msp: params.msp0,
            alpha: T::one(),
        }
    }

    pub fn dissolved_mass(&self) -> T {
        self.m.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn total_mass(&self) -> T {
        self.dissolved_mass() + self.msp
    }

    pub fn to_vector(&self) -> SVector<T, 7> {
        SVector::<T, 7>::from_column_slice(&[
            self.m[0], self.m[1], self.m[2], self.m[3], self.m[4], self.msp, self.alpha,
        ])
    }

    pub fn from_vector(v: &SVector<T, 7>) -> Self {
        Self {
            m: [v[0], v[1], v[2], v[3], v[4]],
            msp: v[5],
            alpha: v[6],
        }
    }

    /// Masses and precipitate nonnegative, porosity in `[0, 1]` up to
    /// [`ALPHA_SLACK`].
    pub fn check(&self) -> Result<()> {
        for (i, &m) in self.m.iter().enumerate() {
            if !(m >= T::zero()) {
                return Err(Error::Domain(format!("m{} = {} is negative", i + 1, m.as_f64())));
            }
        }
        if !(self.msp >= T::zero()) {
            return Err(Error::Domain(format!("msp = {} is negative", self.msp.as_f64())));
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one() + T::lit(ALPHA_SLACK)) {
            return Err(Error::Domain(format!("alpha = {} outside [0, 1]", self.alpha.as_f64())));
        }
        Ok(())
    }

    pub fn reduce(&self, mtot: T) -> ReducedState<T> {
        ReducedState { m: self.m, mtot }
    }
}

impl<T: Real> ReducedState<T> {
    pub fn dissolved_mass(&self) -> T {
        self.m.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn to_vector(&self) -> SVector<T, 5> {
        SVector::<T, 5>::from_column_slice(&self.m)
    }

    pub fn from_vector(v: &SVector<T, 5>, mtot: T) -> Self {
        Self {
            m: [v[0], v[1], v[2], v[3], v[4]],
            mtot,
        }
    }
}
