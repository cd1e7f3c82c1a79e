//! Constrained unscented Kalman filter for the species masses.

mod ukf;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{step_discrete, IntegratorConfig};
use crate::model::{CellModel, FullState};
use crate::scalar::Real;

pub use ukf::{clip_symmetric, predict, process_noise, sigma_points, update, SigmaPoints, UkfState, Weights};

/// Discrete-time system `x_k = f(x_{k-1}, I_k)`, `V_k = h(x_k, I_k)` with a
/// feasible set.
pub trait StateSpace<T: Real, const N: usize>: Sync {
    fn propagate(&self, x: &SVector<T, N>, current: T, dt: T) -> Result<SVector<T, N>>;

    fn measure(&self, x: &SVector<T, N>, current: T) -> Result<T>;

    /// Componentwise box `(lo, hi)` of the feasible set.
    fn bounds(&self) -> (SVector<T, N>, SVector<T, N>);

    /// Nearest feasible point; the box clamp by default.
    fn project(&self, x: &SVector<T, N>) -> SVector<T, N> {
        let (lo, hi) = self.bounds();
        SVector::from_fn(|i, _| x[i].max(lo[i]).min(hi[i]))
    }
}

/// A cell model discretised by the adaptive integrator.
#[derive(Debug, Clone)]
pub struct CellSystem<'a, M> {
    pub model: &'a M,
    pub integrator: IntegratorConfig,
}

impl<'a, M> CellSystem<'a, M> {
    pub fn new(model: &'a M, integrator: &IntegratorConfig) -> Self {
        Self {
            model,
            integrator: integrator.without_stops(),
        }
    }
}

impl<T, M, const N: usize> StateSpace<T, N> for CellSystem<'_, M>
where
    T: Real,
    M: CellModel<T, N>,
{
    fn propagate(&self, x: &SVector<T, N>, current: T, dt: T) -> Result<SVector<T, N>> {
        step_discrete(self.model, x, current, dt, &self.integrator)
    }

    fn measure(&self, x: &SVector<T, N>, current: T) -> Result<T> {
        self.model.voltage(x, current)
    }

    fn bounds(&self) -> (SVector<T, N>, SVector<T, N>) {
        self.model.bounds()
    }

    fn project(&self, x: &SVector<T, N>) -> SVector<T, N> {
        self.model.project(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Normalised unscented weights.
    #[default]
    Standard,
    /// `W_i = lambda / (2 (N + lambda))` for `i >= 1` and
    /// `W_0^c = W_0^m + 1 - beta^2 - mu` with `mu = cov_weight_term`. The
    /// mean weights do not sum to one.
    AsTypeset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UkfConfig {
    /// Sigma-point spread.
    pub beta: f64,
    pub kappa: f64,
    /// Additive term of the zeroth covariance weight.
    pub cov_weight_term: f64,
    pub weights: WeightScheme,
    /// Ceiling on every diagonal entry of Q [g^2].
    pub q_cap_abs: f64,
    /// Q entries never exceed this multiple of the previous estimate.
    pub q_cap_rel: f64,
    /// Measurement noise standard deviation [V]; `R = sigma_v^2`.
    pub sigma_v: f64,
    /// `diag(P0) = p0_rel * x0`.
    pub p0_rel: f64,
    /// Filter step [s].
    pub ukf_step: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            kappa: 1.0,
            cov_weight_term: 2.0,
            weights: WeightScheme::Standard,
            q_cap_abs: 0.005,
            q_cap_rel: 0.005,
            sigma_v: 5e-3,
            p0_rel: 0.1,
            ukf_step: 1.0,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, constraint: String| {
            Err(Error::Config {
                field: field.into(),
                constraint,
            })
        };
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta", format!("must lie in (0, 1] (got {})", self.beta));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa", format!("must be nonnegative (got {})", self.kappa));
        }
        if !self.cov_weight_term.is_finite() {
            return bad("cov_weight_term", "must be finite".into());
        }
        for (field, v) in [
            ("q_cap_abs", self.q_cap_abs),
            ("q_cap_rel", self.q_cap_rel),
            ("sigma_v", self.sigma_v),
            ("p0_rel", self.p0_rel),
            ("ukf_step", self.ukf_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("must be strictly positive (got {v})"));
            }
        }
        Ok(())
    }

    /// `lambda = beta^2 (N + kappa) - N`.
    pub fn lambda(&self, n: usize) -> f64 {
        self.beta * self.beta * (n as f64 + self.kappa) - n as f64
    }

    pub fn measurement_variance(&self) -> f64 {
        self.sigma_v * self.sigma_v
    }
}

/// Filter run against a known truth.
#[derive(Debug, Clone)]
pub struct EstimationReport<T> {
    pub times: Vec<T>,
    pub currents: Vec<T>,
    pub measured: Vec<T>,
    /// Predicted output `V_hat` before each update; at `t0` the output of
    /// the initial guess.
    pub predicted: Vec<T>,
    pub truth: Vec<FullState<T>>,
    pub estimate: Vec<FullState<T>>,
    /// Posterior covariance diagonal in filter coordinates.
    pub variance: Vec<Vec<T>>,
    /// Set when a step failed; the report then ends at the last good step.
    pub failure: Option<String>,
}

impl<T: Real> EstimationReport<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `|estimate - truth|` in `[m1..m5, msp, alpha]` order.
    pub fn errors(&self, k: usize) -> [T; 7] {
        let e = self.estimate[k].to_vector() - self.truth[k].to_vector();
        std::array::from_fn(|i| e[i].abs())
    }

    pub fn innovation(&self, k: usize) -> T {
        self.measured[k] - self.predicted[k]
    }

    /// Earliest time after which the error of component `i` stays below
    /// `threshold` to the end of the run.
    pub fn convergence_time(&self, i: usize, threshold: T) -> Option<T> {
        let last_bad = (0..self.len()).rev().find(|&k| !(self.errors(k)[i] < threshold));
        match last_bad {
            None => self.times.first().copied(),
            Some(k) if k + 1 < self.len() => Some(self.times[k + 1]),
            Some(_) => None,
        }
    }

    /// Root mean square of the innovations with `t >= t_from`.
    pub fn innovation_rms(&self, t_from: T) -> T {
        let (sum, n) = (0..self.len())
            .filter(|&k| self.times[k] >= t_from)
            .fold((T::zero(), 0usize), |(s, n), k| (s + self.innovation(k).powi(2), n + 1));
        if n == 0 {
            T::zero()
        } else {
            (sum / T::lit(n as f64)).sqrt()
        }
    }
}

/// Measurements `V_k` at `times[k] = t0 + k dt`, with `currents[k]` applied
/// over `(t_{k-1}, t_k]`.
#[derive(Debug, Clone)]
pub struct MeasurementRecord<T> {
    pub times: Vec<T>,
    pub currents: Vec<T>,
    pub voltages: Vec<T>,
    pub truth: Vec<FullState<T>>,
}

/// Runs the filter from `x0` over every measurement of `record`. `expand`
/// maps filter states to the seven-state view for the report.
pub fn run_estimation<T, S, const N: usize>(
    system: &S,
    record: &MeasurementRecord<T>,
    x0: &SVector<T, N>,
    cfg: &UkfConfig,
    expand: impl Fn(&SVector<T, N>) -> Result<FullState<T>>,
) -> Result<EstimationReport<T>>
where
    T: Real,
    S: StateSpace<T, N>,
{
    cfg.validate()?;
    let len = record.times.len();
    if len == 0 || record.currents.len() != len || record.voltages.len() != len || record.truth.len() != len {
        return Err(Error::Shape("measurement record columns differ in length or are empty".into()));
    }
    let dt = T::lit(cfg.ukf_step);
    for w in record.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > T::lit(1e-9) * dt {
            return Err(Error::Shape(format!(
                "measurement grid is not uniform at ukf_step = {}",
                cfg.ukf_step
            )));
        }
    }
    let x0 = system.project(x0);
    let mut state = UkfState::initial(&x0, cfg);
    let mut report = EstimationReport {
        times: vec![record.times[0]],
        currents: vec![record.currents[0]],
        measured: vec![record.voltages[0]],
        predicted: vec![system.measure(&x0, record.currents[0])?],
        truth: vec![record.truth[0]],
        estimate: vec![expand(&x0)?],
        variance: vec![state.covariance.diagonal().iter().copied().collect()],
        failure: None,
    };
    for k in 1..len {
        let step = predict(system, &state, record.currents[k], dt, cfg)
            .and_then(|prior| update(system, &prior, record.voltages[k], record.currents[k], cfg))
            .and_then(|post| expand(&post.estimate).map(|full| (post, full)));
        match step {
            Ok((post, full)) => {
                report.times.push(record.times[k]);
                report.currents.push(record.currents[k]);
                report.measured.push(record.voltages[k]);
                report.predicted.push(record.voltages[k] - post.innovation);
                report.truth.push(record.truth[k]);
                report.estimate.push(full);
                report.variance.push(post.covariance.diagonal().iter().copied().collect());
                state = post;
            }
            Err(e) => {
                report.failure = Some(format!("step {k} (t = {}): {e}", record.times[k].as_f64()));
                break;
            }
        }
    }
    Ok(report)
}
