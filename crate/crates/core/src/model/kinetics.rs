//! Nernst potentials, reaction currents and the closed-form terminal voltage.
//!
//! The charge balance `sum_j I_j = I` is quadratic in `Y = exp(F V / (2RT))`
//! once the Butler-Volmer currents are rewritten with the Omega
//! normalisation, so the voltage follows without an iterative solve.
//! Everything is evaluated in the log domain: `Y` itself is of order 1e20 on
//! the high plateau.

use crate::error::{Error, Result};
use crate::model::params::{ModelParams, OmegaReference, N_REACTIONS, N_SPECIES};
use crate::model::state::FullState;
use crate::scalar::{c, Real};

fn floored_log_masses<T: Real>(m: &[T; N_SPECIES], params: &ModelParams<T>) -> Result<[T; N_SPECIES]> {
    let mut out = [T::zero(); N_SPECIES];
    for (i, (&mi, slot)) in m.iter().zip(out.iter_mut()).enumerate() {
        if !mi.is_finite_val() {
            return Err(Error::Domain(format!("m{} is not finite", i + 1)));
        }
        *slot = mi.max(params.effective_floor()).ln();
    }
    Ok(out)
}

fn active_area<T: Real>(alpha: T, params: &ModelParams<T>) -> Result<T> {
    if !(alpha > T::zero()) || !alpha.is_finite_val() {
        return Err(Error::Domain(format!(
            "relative porosity {} must be positive",
            alpha.as_f64()
        )));
    }
    Ok(params.av0 * alpha.powf(params.gamma))
}

/// Equilibrium potential of every reaction [V].
pub fn nernst_potentials<T: Real>(state: &FullState<T>, params: &ModelParams<T>) -> Result<[T; N_REACTIONS]> {
    let ln_m = floored_log_masses(&state.m, params)?;
    let rt_f = params.gas_r * params.temp / params.faraday;
    let mut e = [T::zero(); N_REACTIONS];
    for (j, ej) in e.iter_mut().enumerate() {
        let mut sum = T::zero();
        for i in 0..N_SPECIES {
            sum += params.stoich[i][j] * (ln_m[i] - params.unit_mass(i).ln());
        }
        *ej = params.e0[j] - rt_f / params.nj[j] * sum;
        if !ej.is_finite_val() {
            return Err(Error::Domain(format!("E{} is not finite", j + 1)));
        }
    }
    Ok(e)
}

/// Log-domain kinetic factors of the rearranged currents.
///
/// `forward[j] = ln(prod_i m_i^(p_ij + s_ij/2) / Omega_1j)` and
/// `backward[j] = ln(prod_i m_i^(q_ij - s_ij/2) / Omega_2j)`, so that
/// `I_j = -a_v (Y exp(forward_j) - exp(backward_j) / Y)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KineticFactors<T> {
    pub forward: [T; N_REACTIONS],
    pub backward: [T; N_REACTIONS],
    pub active_area: T,
}

pub(crate) fn kinetic_factors<T: Real>(state: &FullState<T>, params: &ModelParams<T>) -> Result<KineticFactors<T>> {
    let ln_m = floored_log_masses(&state.m, params)?;
    let ln_ref = match params.options.omega_reference {
        OmegaReference::Current => ln_m,
        OmegaReference::Initial => floored_log_masses(&params.m0, params)?,
    };
    let f = params.half_f_over_rt();
    let half = c::<T>(0.5);
    let mut forward = [T::zero(); N_REACTIONS];
    let mut backward = [T::zero(); N_REACTIONS];
    for j in 0..N_REACTIONS {
        let ln_i0 = params.i0[j].ln();
        // ln Omega_1j and ln Omega_2j
        let mut ln_omega1 = -ln_i0 + f * params.e0[j];
        let mut ln_omega2 = -ln_i0 - f * params.e0[j];
        let mut ln_num1 = T::zero();
        let mut ln_num2 = T::zero();
        for i in 0..N_SPECIES {
            let s = params.stoich[i][j];
            let (p, q) = (params.p(i, j), params.q(i, j));
            let ln_unit = params.unit_mass(i).ln();
            ln_omega1 += p * ln_ref[i] + half * s * ln_unit;
            ln_omega2 += q * ln_ref[i] - half * s * ln_unit;
            ln_num1 += (p + half * s) * ln_m[i];
            ln_num2 += (q - half * s) * ln_m[i];
        }
        forward[j] = ln_num1 - ln_omega1;
        backward[j] = ln_num2 - ln_omega2;
    }
    Ok(KineticFactors {
        forward,
        backward,
        active_area: active_area(state.alpha, params)?,
    })
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b));
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// `ln Y` solving `Delta1 Y - Delta2 / Y + I / a_v = 0` for the positive root.
pub(crate) fn log_y<T: Real>(k: &KineticFactors<T>, current: T) -> Result<T> {
    let ln_d1 = log_sum_exp(&k.forward);
    let ln_d2 = log_sum_exp(&k.backward);
    if !ln_d1.is_finite_val() || !ln_d2.is_finite_val() {
        return Err(Error::Invariant("Delta1/Delta2 not positive and finite".into()));
    }
    let b = current / k.active_area;
    let two = c::<T>(2.0);
    let disc = (b * b + c::<T>(4.0) * (ln_d1 + ln_d2).exp()).sqrt();
    // Pick the cancellation-free form of the positive root.
    let ln_y = if b >= T::zero() {
        two.ln() + ln_d2 - (b + disc).ln()
    } else {
        (disc - b).ln() - two.ln() - ln_d1
    };
    if !ln_y.is_finite_val() {
        return Err(Error::Invariant(format!("voltage root not finite for I = {}", current.as_f64())));
    }
    Ok(ln_y)
}

/// Terminal voltage for the given state and applied current [V].
pub fn output_voltage<T: Real>(state: &FullState<T>, current: T, params: &ModelParams<T>) -> Result<T> {
    if !current.is_finite_val() {
        return Err(Error::Domain("current is not finite".into()));
    }
    let k = kinetic_factors(state, params)?;
    Ok(log_y(&k, current)? / params.half_f_over_rt())
}

/// Residual of the charge-balance quadratic at voltage `v`, i.e.
/// `Delta1 Y - Delta2 / Y + I / a_v`.
pub fn quadratic_residual<T: Real>(state: &FullState<T>, current: T, v: T, params: &ModelParams<T>) -> Result<T> {
    let k = kinetic_factors(state, params)?;
    let fv = params.half_f_over_rt() * v;
    let mut r = current / k.active_area;
    for j in 0..N_REACTIONS {
        r += (fv + k.forward[j]).exp() - (k.backward[j] - fv).exp();
    }
    Ok(r)
}

/// Per-reaction currents at voltage `v` [A]; positive is reduction (discharge).
pub fn reaction_currents<T: Real>(state: &FullState<T>, v: T, params: &ModelParams<T>) -> Result<[T; N_REACTIONS]> {
    let k = kinetic_factors(state, params)?;
    Ok(currents_from_factors(&k, v * params.half_f_over_rt()))
}

pub(crate) fn currents_from_factors<T: Real>(k: &KineticFactors<T>, ln_y: T) -> [T; N_REACTIONS] {
    let mut out = [T::zero(); N_REACTIONS];
    for (j, ij) in out.iter_mut().enumerate() {
        *ij = -k.active_area * ((ln_y + k.forward[j]).exp() - (k.backward[j] - ln_y).exp());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_concentration_state(p: &ModelParams<f64>) -> FullState<f64> {
        FullState {
            m: std::array::from_fn(|i| p.unit_mass(i)),
            msp: 1e-6,
            alpha: 1.0,
        }
    }

    #[test]
    fn unit_concentrations_give_reference_potentials() {
        let p = ModelParams::<f64>::default();
        let e = nernst_potentials(&unit_concentration_state(&p), &p).unwrap();
        for (ej, e0) in e.iter().zip([2.4673, 2.3742, 2.3420, 2.0693]) {
            assert!((ej - e0).abs() < 1e-13, "{ej} vs {e0}");
        }
    }

    #[test]
    fn initial_state_potential_matches_scalar_evaluation() {
        // E_1 = E_1^0 - (RT/F) * [-1/2 ln(m1/(8*32*0.0114)) + 1/2 ln(m2/(8*32*0.0114))]
        // evaluated independently in python: 2.6216242214125858
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let e = nernst_potentials(&s, &p).unwrap();
        assert!((e[0] - 2.6216242214125858).abs() < 1e-12, "{}", e[0]);
    }

    #[test]
    fn doubling_masses_shifts_potentials_log_linearly() {
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let mut d = s;
        d.m.iter_mut().for_each(|m| *m *= 2.0);
        let e1 = nernst_potentials(&s, &p).unwrap();
        let e2 = nernst_potentials(&d, &p).unwrap();
        let rt_f = p.gas_r * p.temp / p.faraday;
        for j in 0..N_REACTIONS {
            let col: f64 = (0..N_SPECIES).map(|i| p.stoich[i][j]).sum();
            let expect = -(rt_f / p.nj[j]) * 2f64.ln() * col;
            assert!((e2[j] - e1[j] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_overpotential_gives_zero_current() {
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let e = nernst_potentials(&s, &p).unwrap();
        for j in 0..N_REACTIONS {
            let ij = reaction_currents(&s, e[j], &p).unwrap();
            let scale = 2.0 * p.i0[j];
            assert!(ij[j].abs() < 1e-12 * scale, "I_{j} = {}", ij[j]);
        }
    }

    #[test]
    fn low_voltage_drives_every_reaction_forward() {
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let e = nernst_potentials(&s, &p).unwrap();
        let vmin = e.iter().copied().fold(f64::INFINITY, f64::min);
        let ij = reaction_currents(&s, vmin - 0.01, &p).unwrap();
        assert!(ij.iter().all(|&x| x > 0.0), "{ij:?}");
    }

    #[test]
    fn open_circuit_voltage_lies_between_equilibria() {
        let p = ModelParams::<f64>::default();
        let s = FullState::initial(&p);
        let v = output_voltage(&s, 0.0, &p).unwrap();
        let e = nernst_potentials(&s, &p).unwrap();
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(v >= lo && v <= hi, "{v} not in [{lo}, {hi}]");
    }

    #[test]
    fn non_positive_porosity_is_a_domain_error() {
        let p = ModelParams::<f64>::default();
        let mut s = FullState::initial(&p);
        s.alpha = 0.0;
        assert!(matches!(output_voltage(&s, 1.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn nan_mass_is_reported() {
        let p = ModelParams::<f64>::default();
        let mut s = FullState::initial(&p);
        s.m[2] = f64::NAN;
        match nernst_potentials(&s, &p) {
            Err(Error::Domain(msg)) => assert!(msg.contains("m3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn initial_reference_variant_differs_away_from_m0() {
        let cur = ModelParams::<f64>::with_options(crate::model::params::ModelOptions {
            omega_reference: OmegaReference::Current,
            precipitation_gated: false,
        });
        let init = ModelParams::<f64>::default();
        let s0 = FullState::initial(&cur);
        // identical at m = m0
        let a = output_voltage(&s0, 1.0, &cur).unwrap();
        let b = output_voltage(&s0, 1.0, &init).unwrap();
        assert!((a - b).abs() < 1e-12);
        let mut s = s0;
        s.m[1] = 0.5;
        let a = output_voltage(&s, 1.0, &cur).unwrap();
        let b = output_voltage(&s, 1.0, &init).unwrap();
        assert!((a - b).abs() > 1e-3);
    }
}
