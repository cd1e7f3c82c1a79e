//! Physical and kinetic constants of the cell.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

/// Number of dissolved species: S8, S8(2-), S6(2-), S4(2-), S(2-).
pub const N_SPECIES: usize = 5;
/// Number of reduction reactions.
pub const N_REACTIONS: usize = 4;

/// Stoichiometric coefficients as exact fractions `(numerator, denominator)`,
/// species along rows and reactions along columns.
pub const STOICH_EXACT: [[(i64, i64); N_REACTIONS]; N_SPECIES] = [
    [(-1, 2), (0, 1), (0, 1), (0, 1)],
    [(1, 2), (-3, 2), (0, 1), (0, 1)],
    [(0, 1), (2, 1), (-1, 1), (0, 1)],
    [(0, 1), (0, 1), (3, 2), (-1, 6)],
    [(0, 1), (0, 1), (0, 1), (2, 3)],
];

/// Sulfur atoms per dissolved species, as integers.
pub const SULFUR_ATOMS: [i64; N_SPECIES] = [8, 8, 6, 4, 1];

/// Exact per-reaction sulfur balance `sum_i n_S,i * s_ij` of the reference
/// stoichiometry. Every entry is zero.
pub fn exact_sulfur_balance() -> [Ratio<i64>; N_REACTIONS] {
    let mut out = [Ratio::from_integer(0); N_REACTIONS];
    for (j, slot) in out.iter_mut().enumerate() {
        for (row, &ns) in STOICH_EXACT.iter().zip(SULFUR_ATOMS.iter()) {
            let (num, den) = row[j];
            *slot += Ratio::new(num, den) * Ratio::from_integer(ns);
        }
    }
    out
}

/// Which masses enter the Omega normalisation of the rearranged
/// Butler-Volmer currents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaReference {
    /// Current masses; the rearranged currents equal the plain
    /// Butler-Volmer/Nernst form exactly.
    Current,
    /// Initial masses `m0`.
    #[default]
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub omega_reference: OmegaReference,
    /// Clip the precipitation driving term at zero (no re-dissolution).
    pub precipitation_gated: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            omega_reference: OmegaReference::Initial,
            precipitation_gated: false,
        }
    }
}

/// Cell constants. Units: volts, amperes, grams, liters, seconds, kelvin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Real + serde::de::DeserializeOwned"))]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams<T> {
    /// Reference potentials E_j^0 [V].
    pub e0: [T; N_REACTIONS],
    /// Exchange current densities [A/m^2].
    pub i0: [T; N_REACTIONS],
    /// Initial active area [m^2].
    pub av0: T,
    /// Morphology exponent on relative porosity.
    pub gamma: T,
    /// Porosity rate constant [1/g].
    pub omega: T,
    /// Precipitation rate constant [1/(g s)].
    pub kp: T,
    /// Saturation mass of S(2-) [g].
    pub s_sat: T,
    /// Cell volume [L].
    pub vol: T,
    /// Molar mass of sulfur [g/mol].
    pub ms: T,
    pub ns: [T; N_SPECIES],
    pub nj: [T; N_REACTIONS],
    pub gas_r: T,
    pub faraday: T,
    pub temp: T,
    pub stoich: [[T; N_REACTIONS]; N_SPECIES],
    /// Initial (fully charged) dissolved masses [g].
    pub m0: [T; N_SPECIES],
    /// Initial precipitate nucleus [g].
    pub msp0: T,
    /// Floor applied to masses inside logarithms and powers [g].
    pub mass_floor: T,
    pub options: ModelOptions,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        let stoich = STOICH_EXACT.map(|row| row.map(|(n, d)| c::<T>(n as f64 / d as f64)));
        Self {
            e0: [2.4673, 2.3742, 2.3420, 2.0693].map(c),
            i0: [2.00, 0.02, 0.02, 0.02].map(c),
            av0: c(1.0),
            gamma: c(0.4832),
            omega: c(0.6133),
            kp: c(22.0),
            s_sat: c(0.0001),
            vol: c(0.0114),
            ms: c(32.0),
            ns: SULFUR_ATOMS.map(|n| c(n as f64)),
            nj: [1.0; N_REACTIONS].map(c),
            gas_r: c(8.3145),
            faraday: c(9.649e4),
            temp: c(298.0),
            stoich,
            m0: [3.0377, 1.83e-5, 1.83e-5, 1.83e-5, 3.26e-6].map(c),
            msp0: c(1e-6),
            mass_floor: c(1e-300),
            options: ModelOptions::default(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Table values with the given options.
    pub fn with_options(options: ModelOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    /// Mass floor, raised to the smallest positive normal of `T`.
    #[inline]
    pub fn effective_floor(&self) -> T {
        self.mass_floor.max(T::min_positive())
    }

    /// `F / (2 R T)` [1/V].
    #[inline]
    pub fn half_f_over_rt(&self) -> T {
        self.faraday / (c::<T>(2.0) * self.gas_r * self.temp)
    }

    /// Mass of species `i` that corresponds to 1 mol/L: `n_S,i * M_s * v` [g].
    #[inline]
    pub fn unit_mass(&self, i: usize) -> T {
        self.ns[i] * self.ms * self.vol
    }

    /// Positive part of the stoichiometry, `p_ij = max(s_ij, 0)`.
    pub fn p(&self, i: usize, j: usize) -> T {
        self.stoich[i][j].max(T::zero())
    }

    /// Magnitude of the negative part, `q_ij = max(-s_ij, 0)`.
    pub fn q(&self, i: usize, j: usize) -> T {
        (-self.stoich[i][j]).max(T::zero())
    }

    /// Total sulfur mass of the fully charged cell, dissolved plus nucleus [g].
    pub fn initial_total_mass(&self) -> T {
        self.m0.iter().fold(self.msp0, |acc, &m| acc + m)
    }

    /// Per-reaction sulfur balance of the configured stoichiometry.
    pub fn sulfur_balance(&self) -> [T; N_REACTIONS] {
        let mut out = [T::zero(); N_REACTIONS];
        for (j, slot) in out.iter_mut().enumerate() {
            for i in 0..N_SPECIES {
                *slot += self.ns[i] * self.stoich[i][j];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn positive<T: Real>(field: &str, v: T) -> Result<()> {
            if v > T::zero() && v.is_finite_val() {
                Ok(())
            } else {
                Err(Error::Config {
                    field: field.to_string(),
                    constraint: format!("must be strictly positive (got {})", v.as_f64()),
                })
            }
        }
        for (j, &v) in self.i0.iter().enumerate() {
            positive(&format!("i0[{j}]"), v)?;
        }
        for (j, &v) in self.nj.iter().enumerate() {
            positive(&format!("nj[{j}]"), v)?;
        }
        for (i, &v) in self.ns.iter().enumerate() {
            positive(&format!("ns[{i}]"), v)?;
        }
        for (i, &v) in self.m0.iter().enumerate() {
            positive(&format!("m0[{i}]"), v)?;
        }
        for (name, v) in [
            ("av0", self.av0),
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("kp", self.kp),
            ("s_sat", self.s_sat),
            ("vol", self.vol),
            ("ms", self.ms),
            ("gas_r", self.gas_r),
            ("faraday", self.faraday),
            ("temp", self.temp),
        ] {
            positive(name, v)?;
        }
        if self.gamma > T::one() {
            return Err(Error::Config {
                field: "gamma".into(),
                constraint: format!("must lie in (0, 1] (got {})", self.gamma.as_f64()),
            });
        }
        if !(self.mass_floor >= T::zero()) {
            return Err(Error::Config {
                field: "mass_floor".into(),
                constraint: "must be nonnegative".into(),
            });
        }
        if !(self.msp0 >= T::zero()) {
            return Err(Error::Config {
                field: "msp0".into(),
                constraint: "must be nonnegative".into(),
            });
        }
        for (j, &b) in self.sulfur_balance().iter().enumerate() {
            if b.abs() > c(1e-9) {
                return Err(Error::Config {
                    field: format!("stoich[:, {j}]"),
                    constraint: format!("violates sulfur balance (sum n_S * s = {})", b.as_f64()),
                });
            }
        }
        Ok(())
    }

    /// Casts every constant to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let f = |x: T| U::lit(x.as_f64());
        ModelParams {
            e0: self.e0.map(f),
            i0: self.i0.map(f),
            av0: f(self.av0),
            gamma: f(self.gamma),
            omega: f(self.omega),
            kp: f(self.kp),
            s_sat: f(self.s_sat),
            vol: f(self.vol),
            ms: f(self.ms),
            ns: self.ns.map(f),
            nj: self.nj.map(f),
            gas_r: f(self.gas_r),
            faraday: f(self.faraday),
            temp: f(self.temp),
            stoich: self.stoich.map(|row| row.map(f)),
            m0: self.m0.map(f),
            msp0: f(self.msp0),
            mass_floor: f(self.mass_floor),
            options: self.options.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stoichiometry_balances_exactly() {
        for b in exact_sulfur_balance() {
            assert_eq!(b, Ratio::from_integer(0));
        }
    }

    #[test]
    fn p_minus_q_recovers_stoichiometry() {
        let p = ModelParams::<f64>::default();
        for i in 0..N_SPECIES {
            for j in 0..N_REACTIONS {
                assert!(p.p(i, j) >= 0.0 && p.q(i, j) >= 0.0);
                assert_eq!(p.p(i, j) - p.q(i, j), p.stoich[i][j]);
            }
        }
    }

    #[test]
    fn defaults_validate() {
        ModelParams::<f64>::default().validate().unwrap();
        ModelParams::<f32>::default().validate().unwrap();
    }

    #[test]
    fn negative_rate_constant_is_rejected() {
        let p = ModelParams::<f64> {
            kp: -1.0,
            ..Default::default()
        };
        match p.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "kp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_above_one_is_rejected() {
        let p = ModelParams::<f64> {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config { field, .. }) if field == "gamma"));
    }

    #[test]
    fn unbalanced_stoichiometry_is_rejected() {
        let mut p = ModelParams::<f64>::default();
        p.stoich[4][3] = 1.0;
        assert!(p.validate().is_err());
    }
}
