//! State derivatives for the full and reduced models.

use crate::error::{Error, Result};
use crate::model::kinetics::{currents_from_factors, kinetic_factors, log_y};
use crate::model::params::{ModelParams, N_REACTIONS, N_SPECIES};
use crate::model::state::{FullState, ReducedState};
use crate::scalar::Real;

/// Precipitation rate `dm_Sp/dt` [g/s].
pub fn precipitation_rate<T: Real>(state: &FullState<T>, params: &ModelParams<T>) -> T {
    let drive = state.m[4] - params.s_sat;
    let drive = if params.options.precipitation_gated {
        drive.max(T::zero())
    } else {
        drive
    };
    params.kp * state.msp * drive
}

/// Mass production of each dissolved species by the redox reactions [g/s].
fn reaction_source<T: Real>(currents: &[T; N_REACTIONS], params: &ModelParams<T>) -> [T; N_SPECIES] {
    std::array::from_fn(|i| {
        let mut acc = T::zero();
        for (j, &ij) in currents.iter().enumerate() {
            acc += params.stoich[i][j] * ij / (params.nj[j] * params.faraday);
        }
        params.ns[i] * params.ms * acc
    })
}

/// Time derivative of all seven states, with the voltage eliminated
/// analytically.
pub fn full_derivative<T: Real>(state: &FullState<T>, current: T, params: &ModelParams<T>) -> Result<FullState<T>> {
    let k = kinetic_factors(state, params)?;
    let currents = currents_from_factors(&k, log_y(&k, current)?);
    let mut dm = reaction_source(&currents, params);
    let dmsp = precipitation_rate(state, params);
    dm[4] -= dmsp;
    Ok(FullState {
        m: dm,
        msp: dmsp,
        alpha: -params.omega * dmsp,
    })
}

/// Excess dissolved mass, relative to the total, that reconstruction
/// absorbs as a zero precipitate. Integration error of a few `rel_tol`
/// can carry a state with no precipitate just past the total.
pub const RECONSTRUCT_SLACK: f64 = 1e-6;

/// Precipitate mass and porosity implied by mass conservation.
///
/// Excess dissolved mass within [`RECONSTRUCT_SLACK`]` * mtot` yields a zero
/// precipitate.
pub fn reduced_reconstruct<T: Real>(m: &[T; N_SPECIES], mtot: T, params: &ModelParams<T>) -> Result<(T, T)> {
    let dissolved = m.iter().fold(T::zero(), |a, &b| a + b);
    let msp = mtot - dissolved;
    if !msp.is_finite_val() {
        return Err(Error::Domain("reconstructed precipitate not finite".into()));
    }
    if msp < -mtot.abs() * crate::scalar::c(RECONSTRUCT_SLACK) {
        return Err(Error::Infeasible {
            dissolved: dissolved.as_f64(),
            total: mtot.as_f64(),
        });
    }
    let msp = msp.max(T::zero());
    let alpha = T::one() - params.omega * msp;
    if alpha < T::zero() {
        return Err(Error::PorosityExhausted { alpha: alpha.as_f64() });
    }
    Ok((msp, alpha))
}

/// The closure without the feasibility check: a dissolved total above
/// `mtot` gives a negative precipitate and a porosity above one, as the
/// formulas do. The precipitation rate stays smooth there, which lets a
/// filter evaluate sigma points on both sides of the physical boundary.
pub fn reduced_reconstruct_extended<T: Real>(m: &[T; N_SPECIES], mtot: T, params: &ModelParams<T>) -> Result<(T, T)> {
    let msp = mtot - m.iter().fold(T::zero(), |a, &b| a + b);
    let alpha = T::one() - params.omega * msp;
    if !msp.is_finite_val() {
        return Err(Error::Domain("reconstructed precipitate not finite".into()));
    }
    if !(alpha > T::zero()) {
        return Err(Error::PorosityExhausted { alpha: alpha.as_f64() });
    }
    Ok((msp, alpha))
}

impl<T: Real> ReducedState<T> {
    /// Full seven-state view using the conservation closure.
    pub fn expand(&self, params: &ModelParams<T>) -> Result<FullState<T>> {
        let (msp, alpha) = reduced_reconstruct(&self.m, self.mtot, params)?;
        Ok(FullState { m: self.m, msp, alpha })
    }
}

/// Derivative of the five dissolved masses of the reduced model.
pub fn reduced_derivative<T: Real>(state: &ReducedState<T>, current: T, params: &ModelParams<T>) -> Result<[T; N_SPECIES]> {
    let full = state.expand(params)?;
    Ok(full_derivative(&full, current, params)?.m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::kinetics::{nernst_potentials, output_voltage};
    use crate::model::params::ModelOptions;

    #[test]
    fn no_nucleus_means_no_precipitation() {
        let p = ModelParams::<f64>::default();
        let mut s = FullState::initial(&p);
        s.msp = 0.0;
        s.m[4] = 0.5;
        let d = full_derivative(&s, 1.0, &p).unwrap();
        assert_eq!(d.msp, 0.0);
        assert_eq!(d.alpha, 0.0);
    }

    #[test]
    fn derivative_matches_stepwise_evaluation() {
        // independent evaluation: Nernst -> overpotential -> sinh currents,
        // voltage from the closed form, sources assembled per species
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let v = output_voltage(&s, 1.0, &p).unwrap();
        let e = nernst_potentials(&s, &p).unwrap();
        let f = p.faraday / (2.0 * p.gas_r * p.temp);
        let ij: Vec<f64> = (0..4)
            .map(|j| -2.0 * p.av0 * p.i0[j] * (f * (v - e[j])).sinh())
            .collect();
        let d = full_derivative(&s, 1.0, &p).unwrap();
        for i in 0..5 {
            let mut expect = 0.0;
            for j in 0..4 {
                expect += p.ns[i] * p.ms * p.stoich[i][j] * ij[j] / (p.nj[j] * p.faraday);
            }
            if i == 4 {
                expect -= p.kp * s.msp * (s.m[4] - p.s_sat);
            }
            let scale = expect.abs().max(1e-12);
            assert!((d.m[i] - expect).abs() <= 1e-9 * scale, "species {i}: {} vs {expect}", d.m[i]);
        }
        let dmsp = p.kp * s.msp * (s.m[4] - p.s_sat);
        assert_eq!(d.msp, dmsp);
        assert_eq!(d.alpha, -p.omega * dmsp);
    }

    #[test]
    fn derivative_conserves_sulfur() {
        let p = ModelParams::<f64>::default();
        let s = FullState {
            m: [1.2, 0.4, 0.6, 0.3, 0.2],
            msp: 0.3,
            alpha: 0.8,
        };
        let d = full_derivative(&s, 1.3, &p).unwrap();
        let sum: f64 = d.m.iter().sum::<f64>() + d.msp;
        assert!(sum.abs() < 1e-14 * s.total_mass(), "{sum}");
    }

    #[test]
    fn gated_precipitation_never_redissolves() {
        let p = ModelParams::<f64>::with_options(ModelOptions {
            precipitation_gated: true,
            ..Default::default()
        });
        let s = FullState {
            m: [1.0, 0.1, 0.1, 0.1, 1e-5],
            msp: 0.2,
            alpha: 0.9,
        };
        assert_eq!(precipitation_rate(&s, &p), 0.0);
        let ungated = ModelParams::<f64>::default();
        assert!(precipitation_rate(&s, &ungated) < 0.0);
    }

    #[test]
    fn fully_charged_reconstruction() {
        let p = ModelParams::<f64>::default();
        let mtot: f64 = p.m0.iter().sum();
        let (msp, alpha) = reduced_reconstruct(&p.m0, mtot, &p).unwrap();
        assert_eq!(msp, 0.0);
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn porosity_boundary() {
        let p = ModelParams::<f64>::default();
        let m = [1.0, 0.2, 0.1, 0.1, 0.05];
        let sum: f64 = m.iter().sum();
        let (msp, alpha) = reduced_reconstruct(&m, sum + 1.0 / p.omega, &p).unwrap();
        assert!((msp - 1.0 / 0.6133).abs() < 1e-12);
        assert!(alpha.abs() < 1e-12);
        assert!(matches!(
            reduced_reconstruct(&m, sum + 1.1 / p.omega, &p),
            Err(Error::PorosityExhausted { .. })
        ));
    }

    #[test]
    fn excess_dissolved_mass_is_infeasible() {
        let p = ModelParams::<f64>::default();
        assert!(matches!(
            reduced_reconstruct(&p.m0, 1.0, &p),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn reduced_matches_full_projection() {
        let p = ModelParams::<f64>::default();
        let full = FullState {
            m: [1.1, 0.5, 0.4, 0.3, 0.25],
            msp: 0.2,
            alpha: 1.0 - p.omega * 0.2,
        };
        let red = full.reduce(full.total_mass());
        let a = reduced_derivative(&red, 1.0, &p).unwrap();
        let b = full_derivative(&full, 1.0, &p).unwrap();
        for i in 0..5 {
            assert!((a[i] - b.m[i]).abs() <= 1e-12 * b.m[i].abs().max(1e-12));
        }
    }

    #[test]
    fn reduced_at_full_charge_has_no_precipitation_loss() {
        let p = ModelParams::<f64>::default();
        let mtot: f64 = p.m0.iter().sum();
        let red = ReducedState { m: p.m0, mtot };
        let full = FullState { m: p.m0, msp: 0.0, alpha: 1.0 };
        let a = reduced_derivative(&red, 1.0, &p).unwrap();
        let b = full_derivative(&full, 1.0, &p).unwrap();
        assert_eq!(b.msp, 0.0);
        assert_eq!(a, b.m);
    }

    #[test]
    fn biased_total_mass_changes_sulfide_rate() {
        let p = ModelParams::<f64>::default();
        let m = [0.8, 0.5, 0.5, 0.5, 0.4];
        let mtot = m.iter().sum::<f64>() + 0.3;
        let exact = reduced_derivative(&ReducedState { m, mtot }, 1.0, &p).unwrap();
        let biased = reduced_derivative(&ReducedState { m, mtot: mtot * 1.05 }, 1.0, &p).unwrap();
        let rel = (biased[4] - exact[4]).abs() / exact[4].abs();
        assert!(rel > 1e-3, "relative change {rel}");
    }
}
