//! Time integration of the cell models under a current profile.

mod rosenbrock;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellModel, CurrentProfile, FullState, ModelOrder};
use crate::scalar::{c, Real};
use rosenbrock::{adaptive_interval, fixed_interval, initial_step, Rhs, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    /// Absolute tolerance on mass components [g].
    pub abs_tol_mass: f64,
    /// Absolute tolerance on relative porosity.
    pub abs_tol_alpha: f64,
    /// Largest internal step [s].
    pub max_step: f64,
    /// Sampling interval of the returned trajectory [s].
    pub output_interval: f64,
    /// Final time [s].
    pub t_end: f64,
    /// Stop once the sampled voltage is at or below this value [V].
    pub cutoff_voltage: Option<f64>,
    /// Stop once the relative porosity is at or below this value.
    pub alpha_floor: Option<f64>,
    /// Stop once the total dissolved mass is at or below this value [g].
    pub dissolved_mass_floor: Option<f64>,
    /// Step budget per output interval.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            abs_tol_mass: 1e-10,
            abs_tol_alpha: 1e-9,
            max_step: 10.0,
            output_interval: 1.0,
            t_end: 20_000.0,
            cutoff_voltage: Some(1.9),
            alpha_floor: Some(1e-3),
            dissolved_mass_floor: None,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config {
                    field: field.into(),
                    constraint: format!("must be strictly positive (got {v})"),
                })
            }
        };
        pos("rel_tol", self.rel_tol)?;
        pos("abs_tol_mass", self.abs_tol_mass)?;
        pos("abs_tol_alpha", self.abs_tol_alpha)?;
        pos("max_step", self.max_step)?;
        pos("output_interval", self.output_interval)?;
        pos("t_end", self.t_end)?;
        if self.max_steps == 0 {
            return Err(Error::Config {
                field: "max_steps".into(),
                constraint: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Same settings with both tolerances scaled by `factor`.
    pub fn scaled_tolerances(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol * factor,
            abs_tol_mass: self.abs_tol_mass * factor,
            abs_tol_alpha: self.abs_tol_alpha * factor,
            ..self.clone()
        }
    }

    /// No early stop: run to `t_end` regardless of voltage or porosity.
    pub fn without_stops(&self) -> Self {
        Self {
            cutoff_voltage: None,
            alpha_floor: None,
            dissolved_mass_floor: None,
            ..self.clone()
        }
    }

    fn tolerances<T: Real>(&self) -> Tolerances<T> {
        Tolerances {
            rel: c(self.rel_tol),
            abs_mass: c(self.abs_tol_mass),
            abs_alpha: c(self.abs_tol_alpha),
            max_step: c(self.max_step),
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndTime,
    CutoffVoltage,
    PorosityFloor,
    MassFloor,
}

/// Sampled solution.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real, const N: usize> {
    pub order: ModelOrder,
    pub times: Vec<T>,
    pub states: Vec<SVector<T, N>>,
    pub voltage: Vec<T>,
    pub current: Vec<T>,
    /// Whether the mass floor was active anywhere in the interval ending at
    /// each sample (the first sample reports the initial state).
    pub clamped: Vec<bool>,
    /// Accepted step sizes of the interval ending at each sample.
    pub steps: Vec<Vec<T>>,
    pub termination: Termination,
    pub accepted_steps: usize,
}

impl<T: Real, const N: usize> Trajectory<T, N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &SVector<T, N> {
        self.states.last().expect("trajectory always holds the initial sample")
    }

    /// Index of the sample closest to time `t`.
    pub fn nearest_index(&self, t: T) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k >= self.times.len() {
            self.times.len() - 1
        } else if (self.times[k] - t) < (t - self.times[k - 1]) {
            k
        } else {
            k - 1
        }
    }

    /// Seven-state view of every sample.
    pub fn full_states<M: CellModel<T, N>>(&self, model: &M) -> Result<Vec<FullState<T>>> {
        self.states.iter().map(|x| model.expand(x)).collect()
    }
}

fn check_initial<M, T, const N: usize>(model: &M, x0: &SVector<T, N>) -> Result<()>
where
    T: Real,
    M: CellModel<T, N>,
{
    model.expand(x0)?.check()
}

/// Integrates `model` from `x0` under `profile`, sampling every
/// `output_interval` until a termination rule fires.
pub fn simulate<M, T, const N: usize>(
    model: &M,
    x0: &SVector<T, N>,
    profile: &CurrentProfile<T>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    cfg.validate()?;
    check_initial(model, x0)?;
    let tol = cfg.tolerances::<T>();
    let rhs = Rhs { model, profile };
    let dt_out = c::<T>(cfg.output_interval);
    let t_end = c::<T>(cfg.t_end);

    let i0 = profile.at(T::zero());
    let mut traj = Trajectory {
        order: M::ORDER,
        times: vec![T::zero()],
        states: vec![*x0],
        voltage: vec![model.voltage(x0, i0)?],
        current: vec![i0],
        clamped: vec![model.floor_active(x0)],
        steps: vec![Vec::new()],
        termination: Termination::EndTime,
        accepted_steps: 0,
    };
    if let Some(reason) = stop_reason(model, cfg, traj.voltage[0], x0)? {
        traj.termination = reason;
        return Ok(traj);
    }

    let mut y = rhs.to_internal(x0);
    let mut f = rhs.eval(T::zero(), &y)?;
    let mut h = initial_step::<M, T, N>(&tol, &y, &f);
    let mut k = 0usize;
    loop {
        let t0 = traj.times[k];
        let t1 = (c::<T>((k + 1) as f64) * dt_out).min(t_end);
        let iv = adaptive_interval(&rhs, &tol, t0, t1, y, f, h)?;
        let x = rhs.to_physical(&iv.y);
        // a collapse is a clean stop if the state it reached already
        // satisfies a termination rule
        let (t1, stop) = match &iv.stall {
            None => (t1, None),
            Some((ts, _)) => {
                let ts = *ts;
                let reason = match ts > t0 {
                    true => stop_reason(model, cfg, model.voltage(&x, profile.at(ts))?, &x)?,
                    false => None,
                };
                match reason {
                    Some(r) => (ts, Some(r)),
                    None => return Err(iv.complete(&rhs).unwrap_err()),
                }
            }
        };
        y = iv.y;
        f = iv.f_end;
        h = iv.h_next;
        let i1 = profile.at(t1);
        let v1 = model.voltage(&x, i1)?;
        traj.accepted_steps += iv.steps.len();
        traj.times.push(t1);
        traj.states.push(x);
        traj.voltage.push(v1);
        traj.current.push(i1);
        traj.clamped.push(iv.floor_hit);
        traj.steps.push(iv.steps);
        k += 1;
        if let Some(reason) = stop.map_or_else(|| stop_reason(model, cfg, v1, &x), |r| Ok(Some(r)))? {
            traj.termination = reason;
            return Ok(traj);
        }
        if t1 >= t_end {
            traj.termination = Termination::EndTime;
            return Ok(traj);
        }
    }
}

fn stop_reason<M, T, const N: usize>(
    model: &M,
    cfg: &IntegratorConfig,
    v: T,
    y: &SVector<T, N>,
) -> Result<Option<Termination>>
where
    T: Real,
    M: CellModel<T, N>,
{
    if let Some(cut) = cfg.cutoff_voltage {
        if v <= c(cut) {
            return Ok(Some(Termination::CutoffVoltage));
        }
    }
    let full = model.expand(y)?;
    if let Some(floor) = cfg.alpha_floor {
        if full.alpha <= c(floor) {
            return Ok(Some(Termination::PorosityFloor));
        }
    }
    if let Some(floor) = cfg.dissolved_mass_floor {
        if full.dissolved_mass() <= c(floor) {
            return Ok(Some(Termination::MassFloor));
        }
    }
    Ok(None)
}

/// Voltages obtained by re-running the step sizes recorded in `reference`
/// from a different initial state. Steps that fail badly from the new state
/// are split.
///
/// Sharing the step schedule makes differences between runs a smooth
/// function of the initial state, free of step-selection noise.
pub fn replay_voltages<M, T, const N: usize>(
    model: &M,
    x0: &SVector<T, N>,
    profile: &CurrentProfile<T>,
    reference: &Trajectory<T, N>,
    cfg: &IntegratorConfig,
) -> Result<Vec<T>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let tol = cfg.tolerances::<T>();
    let rhs = Rhs { model, profile };
    let mut out = Vec::with_capacity(reference.len());
    out.push(model.voltage(x0, reference.current[0])?);
    let mut y = rhs.to_internal(x0);
    let mut f = rhs.eval(reference.times[0], &y)?;
    for k in 1..reference.len() {
        let (yn, fn_, _) = fixed_interval(&rhs, &tol, reference.times[k - 1], y, f, &reference.steps[k])?;
        y = yn;
        f = fn_;
        out.push(model.voltage(&rhs.to_physical(&y), reference.current[k])?);
    }
    Ok(out)
}

/// Advances `x` from `t0` to `t0 + dt` under `profile` with adaptive steps.
/// `dt = 0` returns `x` unchanged.
pub fn advance<M, T, const N: usize>(
    model: &M,
    x: &SVector<T, N>,
    profile: &CurrentProfile<T>,
    t0: T,
    dt: T,
    cfg: &IntegratorConfig,
) -> Result<SVector<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    if dt == T::zero() {
        return Ok(*x);
    }
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("negative step {}", dt.as_f64())));
    }
    let tol = cfg.tolerances::<T>();
    let rhs = Rhs { model, profile };
    let z = rhs.to_internal(x);
    let f = rhs.eval(t0, &z)?;
    let h = initial_step::<M, T, N>(&tol, &z, &f).min(dt);
    let iv = adaptive_interval(&rhs, &tol, t0, t0 + dt, z, f, h)?.complete(&rhs)?;
    Ok(rhs.to_physical(&iv.y))
}

/// One macro-step of length `dt` at constant current.
pub fn step_discrete<M, T, const N: usize>(
    model: &M,
    x: &SVector<T, N>,
    current: T,
    dt: T,
    cfg: &IntegratorConfig,
) -> Result<SVector<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    advance(model, x, &CurrentProfile::constant(current), T::zero(), dt, cfg)
}
