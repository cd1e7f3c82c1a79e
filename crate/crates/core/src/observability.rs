//! Empirical observability gramian, Fisher information and Cramér-Rao
//! bounds along a discharge.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{replay_voltages, simulate, IntegratorConfig, Trajectory};
use crate::linalg::{spd_inverse, symmetric_eigen, symmetrize};
use crate::model::{CellModel, CurrentProfile};
use crate::scalar::{c, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilityConfig {
    /// Initial-state perturbation, in the units of each state.
    pub epsilon: f64,
    /// Horizon of each perturbed run [s].
    pub window: f64,
    /// Output sampling step [s].
    pub sample_step: f64,
    /// Voltage measurement noise standard deviation [V].
    pub sigma_v: f64,
    /// Fisher matrices with a larger spectral condition number are
    /// reported as singular.
    pub max_condition: f64,
    /// Smoothing width (samples) for locating the dip.
    pub smoothing: usize,
    /// Minimum recovery above the dip [V] for it to count.
    pub dip_prominence: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            window: 60.0,
            sample_step: 0.1,
            sigma_v: 5e-3,
            max_condition: 1e14,
            smoothing: 11,
            dip_prominence: 5e-3,
        }
    }
}

impl ObservabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, constraint: String| {
            Err(Error::Config {
                field: field.into(),
                constraint,
            })
        };
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("must be positive (got {})", self.epsilon));
        }
        if !(self.sample_step > 0.0 && self.sample_step.is_finite()) {
            return bad("sample_step", format!("must be positive (got {})", self.sample_step));
        }
        if !(self.window > self.sample_step && self.window.is_finite()) {
            return bad("window", format!("must exceed sample_step (got {})", self.window));
        }
        if !(self.sigma_v > 0.0 && self.sigma_v.is_finite()) {
            return bad("sigma_v", format!("must be positive (got {})", self.sigma_v));
        }
        if !(self.max_condition > 1.0) {
            return bad("max_condition", format!("must exceed 1 (got {})", self.max_condition));
        }
        if self.smoothing == 0 {
            return bad("smoothing", "must be at least 1".into());
        }
        if !(self.dip_prominence >= 0.0) {
            return bad("dip_prominence", format!("must be nonnegative (got {})", self.dip_prominence));
        }
        Ok(())
    }

    /// Number of left-endpoint samples in the window.
    pub fn samples(&self) -> usize {
        (self.window / self.sample_step).round() as usize
    }
}

/// Gramian together with the perturbation actually applied per direction.
#[derive(Debug, Clone)]
pub struct Gramian<T: Real, const N: usize> {
    pub matrix: SMatrix<T, N, N>,
    /// Signed step for each basis direction; differs from `+epsilon` when
    /// the state sits on a bound.
    pub steps: SVector<T, N>,
}

/// Candidate steps for one direction: `+eps`, `-eps`, then halvings.
fn candidate_steps<T: Real>(eps: T) -> impl Iterator<Item = T> {
    (0..40).flat_map(move |k| {
        let h = eps * c::<T>(0.5f64.powi(k));
        [h, -h]
    })
}

/// Chooses an admissible signed step along each basis direction.
pub fn perturbation_steps<T, const N: usize>(
    x0: &SVector<T, N>,
    eps: T,
    admissible: impl Fn(&SVector<T, N>) -> bool,
) -> Result<SVector<T, N>>
where
    T: Real,
{
    let mut steps = SVector::<T, N>::zeros();
    for i in 0..N {
        let h = candidate_steps(eps)
            .find(|&h| {
                let mut x = *x0;
                x[i] += h;
                admissible(&x)
            })
            .ok_or_else(|| Error::Perturbation {
                direction: i,
                source: Box::new(Error::Domain(format!("no admissible step along direction {i}"))),
            })?;
        steps[i] = h;
    }
    Ok(steps)
}

/// Left-endpoint gramian from sampled outputs. `nominal` and each entry of
/// `perturbed` hold at least `samples` values on the same grid.
pub fn gramian_from_outputs<T: Real, const N: usize>(
    nominal: &[T],
    perturbed: &[Vec<T>],
    steps: &SVector<T, N>,
    samples: usize,
    dt: T,
) -> Result<SMatrix<T, N, N>> {
    if perturbed.len() != N {
        return Err(Error::Shape(format!("{} perturbed runs for {N} states", perturbed.len())));
    }
    if nominal.len() < samples || perturbed.iter().any(|p| p.len() < samples) {
        return Err(Error::Shape(format!("fewer than {samples} output samples")));
    }
    let mut w = SMatrix::<T, N, N>::zeros();
    for k in 0..samples {
        let phi = SVector::<T, N>::from_fn(|i, _| (perturbed[i][k] - nominal[k]) / steps[i]);
        w += phi * phi.transpose() * dt;
    }
    Ok(symmetrize(&w))
}

/// Gramian of an arbitrary output map. `outputs` returns the sampled output
/// for an initial state; `admissible` says which initial states it accepts.
pub fn gramian_with<T, const N: usize, F, A>(
    x0: &SVector<T, N>,
    cfg: &ObservabilityConfig,
    admissible: A,
    outputs: F,
) -> Result<Gramian<T, N>>
where
    T: Real,
    F: Fn(&SVector<T, N>) -> Result<Vec<T>> + Sync,
    A: Fn(&SVector<T, N>) -> bool,
{
    cfg.validate()?;
    let nominal = outputs(x0)?;
    perturbed_gramian(x0, &nominal, cfg, admissible, outputs)
}

fn perturbed_gramian<T, const N: usize, F, A>(
    x0: &SVector<T, N>,
    nominal: &[T],
    cfg: &ObservabilityConfig,
    admissible: A,
    outputs: F,
) -> Result<Gramian<T, N>>
where
    T: Real,
    F: Fn(&SVector<T, N>) -> Result<Vec<T>> + Sync,
    A: Fn(&SVector<T, N>) -> bool,
{
    let steps = perturbation_steps(x0, c(cfg.epsilon), admissible)?;
    let perturbed = (0..N)
        .into_par_iter()
        .map(|i| {
            let mut x = *x0;
            x[i] += steps[i];
            outputs(&x).map_err(|e| Error::Perturbation {
                direction: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = gramian_from_outputs(nominal, &perturbed, &steps, cfg.samples(), c(cfg.sample_step))?;
    Ok(Gramian { matrix, steps })
}

/// Empirical observability gramian of `model` around `x0`.
///
/// Perturbed runs replay the nominal run's step sizes, so voltage
/// differences carry no step-selection noise.
pub fn empirical_gramian<M, T, const N: usize>(
    model: &M,
    x0: &SVector<T, N>,
    profile: &CurrentProfile<T>,
    cfg: &ObservabilityConfig,
    icfg: &IntegratorConfig,
) -> Result<Gramian<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    cfg.validate()?;
    let run_cfg = IntegratorConfig {
        t_end: cfg.window,
        output_interval: cfg.sample_step,
        ..icfg.without_stops()
    };
    let nominal = simulate(model, x0, profile, &run_cfg)?;
    let admissible = |x: &SVector<T, N>| model.admissible(x);
    perturbed_gramian(x0, &nominal.voltage, cfg, admissible, |x| {
        replay_voltages(model, x, profile, &nominal, &run_cfg)
    })
}

/// Fisher information, its inverse and the per-state standard deviations.
#[derive(Debug, Clone)]
pub struct Fisher<T: Real, const N: usize> {
    pub fisher: SMatrix<T, N, N>,
    pub crlb: SMatrix<T, N, N>,
    pub std: SVector<T, N>,
    pub condition: T,
}

/// `F = W / (sigma_v^2 dt)` and `CRLB = F^-1`.
pub fn fisher_and_crlb<T: Real, const N: usize>(
    w: &SMatrix<T, N, N>,
    cfg: &ObservabilityConfig,
) -> Result<Fisher<T, N>> {
    let sigma = c::<T>(cfg.sigma_v);
    let fisher = symmetrize(w) / (sigma * sigma * c(cfg.sample_step));
    let (vals, vecs) = symmetric_eigen(&fisher);
    let lo = vals[0];
    let hi = vals[N - 1];
    let condition = if lo > T::zero() { hi / lo } else { T::max_value().unwrap() };
    let singular = || Error::Singular {
        condition: condition.as_f64(),
        weakest: vecs.column(0).iter().map(|v| v.as_f64()).collect(),
    };
    if !(condition <= c(cfg.max_condition)) {
        return Err(singular());
    }
    let crlb = spd_inverse(&fisher).ok_or_else(singular)?;
    let std = SVector::<T, N>::from_fn(|i, _| crlb[(i, i)].max(T::zero()).sqrt());
    Ok(Fisher {
        fisher,
        crlb,
        std,
        condition,
    })
}

/// Centered moving average; the window shrinks near the ends.
pub fn moving_average<T: Real>(v: &[T], width: usize) -> Vec<T> {
    let half = width / 2;
    (0..v.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(v.len());
            v[lo..hi].iter().fold(T::zero(), |a, &b| a + b) / c((hi - lo) as f64)
        })
        .collect()
}

/// Interior local minima of the smoothed voltage whose prominence (lower of
/// the highest points before and after, minus the minimum) reaches
/// `cfg.dip_prominence`.
pub fn find_dips<T: Real>(voltage: &[T], cfg: &ObservabilityConfig) -> Vec<usize> {
    let s = moving_average(voltage, cfg.smoothing);
    let n = s.len();
    if n < 3 {
        return Vec::new();
    }
    // running maxima from both ends
    let mut left = vec![s[0]; n];
    for k in 1..n {
        left[k] = left[k - 1].max(s[k]);
    }
    let mut right = vec![s[n - 1]; n];
    for k in (0..n - 1).rev() {
        right[k] = right[k + 1].max(s[k]);
    }
    let mut dips = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        if s[k] < s[k - 1] {
            // walk across a flat bottom
            let mut j = k;
            while j + 1 < n && s[j + 1] == s[k] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[k] {
                let prominence = left[k - 1].min(right[j + 1]) - s[k];
                if prominence >= c(cfg.dip_prominence) {
                    dips.push(k);
                }
            }
            k = j + 1;
        } else {
            k += 1;
        }
    }
    dips
}

/// Five checkpoint sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub indices: [usize; 5],
}

/// Two checkpoints on each plateau and one at the dip.
pub fn find_checkpoints<T: Real, const N: usize>(
    traj: &Trajectory<T, N>,
    cfg: &ObservabilityConfig,
) -> Result<Checkpoints> {
    let dips = find_dips(&traj.voltage, cfg);
    let dip = *dips
        .first()
        .ok_or_else(|| Error::Shape("no dip in the voltage trace; the discharge never left the high plateau".into()))?;
    let t0 = traj.times[0];
    let td = traj.times[dip];
    let te = *traj.times.last().unwrap();
    let at = |t: T| traj.nearest_index(t);
    Ok(Checkpoints {
        indices: [
            at(t0 + (td - t0) * c(0.2)),
            at(t0 + (td - t0) * c(0.6)),
            dip,
            at(td + (te - td) * c(0.25)),
            at(td + (te - td) * c(0.65)),
        ],
    })
}

/// Analysis at one checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointReport<T: Real, const N: usize> {
    /// 1-based checkpoint number.
    pub id: usize,
    pub time: T,
    pub state: SVector<T, N>,
    pub gramian: Gramian<T, N>,
    pub fisher: Fisher<T, N>,
}

#[derive(Debug, Clone)]
pub struct ObservabilityReport<T: Real, const N: usize> {
    pub checkpoints: Vec<CheckpointReport<T, N>>,
}

/// Gramian and bounds at each `(time, state)` checkpoint. Each window
/// restarts `profile` at `t = 0`.
pub fn observability_sweep<M, T, const N: usize>(
    model: &M,
    checkpoints: &[(T, SVector<T, N>)],
    profile: &CurrentProfile<T>,
    cfg: &ObservabilityConfig,
    icfg: &IntegratorConfig,
) -> Result<ObservabilityReport<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let checkpoints = checkpoints
        .par_iter()
        .enumerate()
        .map(|(n, &(time, state))| {
            let gramian = empirical_gramian(model, &state, profile, cfg, icfg)?;
            let fisher = fisher_and_crlb(&gramian.matrix, cfg)?;
            Ok(CheckpointReport {
                id: n + 1,
                time,
                state,
                gramian,
                fisher,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservabilityReport { checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_fall_back_to_negative_then_shrink() {
        let x = SVector::<f64, 2>::new(0.5, 0.0);
        let s = perturbation_steps(&x, 1e-6, |v| v[0] <= 0.5 && v[1] >= 0.0).unwrap();
        assert_eq!(s[0], -1e-6);
        assert_eq!(s[1], 1e-6);
        let s = perturbation_steps(&x, 1e-6, |v| (v[0] - 0.5).abs() <= 1e-7).unwrap();
        assert!(s[0] > 0.0 && s[0] <= 1e-7);
    }

    #[test]
    fn no_admissible_step_names_direction() {
        let x = SVector::<f64, 2>::new(0.0, 0.0);
        let r = perturbation_steps(&x, 1e-6, |v| v[1] == 0.0);
        assert!(matches!(r, Err(Error::Perturbation { direction: 1, .. })));
    }

    #[test]
    fn dips_need_prominence() {
        let cfg = ObservabilityConfig {
            smoothing: 1,
            dip_prominence: 0.1,
            ..Default::default()
        };
        let v = [3.0, 2.0, 2.05, 1.0, 2.0, 1.5];
        assert_eq!(find_dips(&v, &cfg), vec![3]);
        let v = [3.0, 2.0, 2.0, 2.5, 1.0];
        assert_eq!(find_dips(&v, &cfg), vec![1]);
        assert!(find_dips(&[3.0, 2.0, 1.0], &cfg).is_empty());
    }

    #[test]
    fn singular_fisher_reports_weakest_direction() {
        let w = SMatrix::<f64, 2, 2>::new(1.0, 0.0, 0.0, 0.0);
        match fisher_and_crlb(&w, &ObservabilityConfig::default()) {
            Err(Error::Singular { weakest, .. }) => {
                assert!(weakest[0].abs() < 1e-12 && (weakest[1].abs() - 1.0).abs() < 1e-12)
            }
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        let s = moving_average(&[1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(s, vec![1.5, 2.0, 3.0, 3.5]);
    }
}
