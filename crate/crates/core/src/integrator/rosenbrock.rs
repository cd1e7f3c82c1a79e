//! Linearly implicit Rosenbrock 2(3) pair of Shampine and Reichelt.
//!
//! The minor polysulfides relax towards their Nernst equilibria on
//! sub-millisecond time scales while the discharge itself evolves over hours,
//! so the stepper must be L-stable. Each step factors `W = I - h d J` once and
//! solves three linear systems; `J` is a forward-difference Jacobian.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::model::{CellModel, CurrentProfile};
use crate::scalar::{c, Real};

pub(crate) struct Rhs<'m, M, T: Real> {
    pub model: &'m M,
    pub profile: &'m CurrentProfile<T>,
}

impl<M, T: Real> Rhs<'_, M, T> {
    /// Physical state to integration coordinates.
    pub fn to_internal<const N: usize>(&self, x: &SVector<T, N>) -> SVector<T, N>
    where
        M: CellModel<T, N>,
    {
        let floor = self.model.params().effective_floor();
        SVector::<T, N>::from_fn(|i, _| if M::log_scaled(i) { x[i].max(floor).ln() } else { x[i] })
    }

    pub fn to_physical<const N: usize>(&self, z: &SVector<T, N>) -> SVector<T, N>
    where
        M: CellModel<T, N>,
    {
        SVector::<T, N>::from_fn(|i, _| if M::log_scaled(i) { z[i].exp() } else { z[i] })
    }

    /// Right-hand side in integration coordinates.
    pub fn eval<const N: usize>(&self, t: T, z: &SVector<T, N>) -> Result<SVector<T, N>>
    where
        M: CellModel<T, N>,
    {
        let x = self.to_physical(z);
        let mut f = self.model.derivative(&x, self.profile.at(t))?;
        for i in 0..N {
            if M::log_scaled(i) {
                f[i] /= x[i];
            }
        }
        Ok(f)
    }

    fn floor_active<const N: usize>(&self, z: &SVector<T, N>) -> bool
    where
        M: CellModel<T, N>,
    {
        self.model.floor_active(&self.to_physical(z))
    }

    fn time_dependent(&self) -> bool {
        !matches!(self.profile, CurrentProfile::Constant { .. })
    }
}

/// Forward-difference Jacobian of the right-hand side and its time partial.
pub(crate) struct Linearization<T: Real, const N: usize> {
    pub jac: SMatrix<T, N, N>,
    pub dfdt: SVector<T, N>,
}

pub(crate) fn linearize<M, T, const N: usize>(
    rhs: &Rhs<'_, M, T>,
    t: T,
    y: &SVector<T, N>,
    f0: &SVector<T, N>,
) -> Result<Linearization<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let sqrt_eps = T::default_epsilon().sqrt();
    let mut jac = SMatrix::<T, N, N>::zeros();
    for i in 0..N {
        let mut yp = *y;
        let delta = sqrt_eps * y[i].abs().max(T::one());
        yp[i] += delta;
        // exact representable increment
        let delta = yp[i] - y[i];
        let fp = rhs.eval(t, &yp)?;
        jac.set_column(i, &((fp - f0) / delta));
    }
    let dfdt = if rhs.time_dependent() {
        let dt = sqrt_eps * t.abs().max(T::one());
        (rhs.eval(t + dt, y)? - f0) / dt
    } else {
        SVector::<T, N>::zeros()
    };
    Ok(Linearization { jac, dfdt })
}

/// Result of one trial step.
pub(crate) struct Trial<T: Real, const N: usize> {
    pub y: SVector<T, N>,
    pub f_end: SVector<T, N>,
    pub err: SVector<T, N>,
    pub floor_hit: bool,
}

pub(crate) fn trial<M, T, const N: usize>(
    rhs: &Rhs<'_, M, T>,
    lin: &Linearization<T, N>,
    t: T,
    y: &SVector<T, N>,
    f0: &SVector<T, N>,
    h: T,
) -> Result<Trial<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let d = T::one() / (c::<T>(2.0) + c::<T>(2.0).sqrt());
    let e32 = c::<T>(6.0) + c::<T>(2.0).sqrt();
    let half = c::<T>(0.5);
    let two = c::<T>(2.0);

    let w = SMatrix::<T, N, N>::identity() - lin.jac * (h * d);
    let lu = Lu::new(w).ok_or_else(|| Error::Integration {
        t: t.as_f64(),
        reason: "singular iteration matrix".into(),
        last_state: y.iter().map(|v| v.as_f64()).collect(),
    })?;
    let solve = |b: SVector<T, N>| -> Result<SVector<T, N>> { Ok(lu.solve(&b)) };
    let hdt = lin.dfdt * (h * d);

    let mut floor_hit = rhs.floor_active(y);
    let k1 = solve(f0 + hdt)?;
    let y_mid = y + k1 * (half * h);
    floor_hit |= rhs.floor_active(&y_mid);
    let f1 = rhs.eval(t + half * h, &y_mid)?;
    let k2 = solve(f1 - k1)? + k1;
    let y_new = y + k2 * h;
    floor_hit |= rhs.floor_active(&y_new);
    let f2 = rhs.eval(t + h, &y_new)?;
    let k3 = solve(f2 - (k2 - f1) * e32 - (k1 - f0) * two + hdt)?;
    let err = (k1 - k2 * two + k3) * (h / c(6.0));
    Ok(Trial {
        y: y_new,
        f_end: f2,
        err,
        floor_hit,
    })
}

/// Tolerance settings resolved to the working scalar.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerances<T> {
    pub rel: T,
    pub abs_mass: T,
    pub abs_alpha: T,
    pub max_step: T,
    pub max_steps: usize,
}

impl<T: Real> Tolerances<T> {
    /// Error scale of component `i`. For log-scaled components the usual
    /// `abs + rel * |m|` is divided through by the mass.
    fn scale<M: CellModel<T, N>, const N: usize>(&self, i: usize, a: T, b: T) -> T {
        if M::log_scaled(i) {
            let m = a.max(b).exp();
            if m > T::zero() {
                (self.rel + self.abs_mass / m).min(c(LOG_SCALE_CAP))
            } else {
                c(LOG_SCALE_CAP)
            }
        } else {
            M::abs_tol(i, self.abs_mass, self.abs_alpha) + self.rel * a.abs().max(b.abs())
        }
    }

    pub fn error_norm<M: CellModel<T, N>, const N: usize>(
        &self,
        y0: &SVector<T, N>,
        y1: &SVector<T, N>,
        err: &SVector<T, N>,
    ) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            let r = err[i] / self.scale::<M, N>(i, y0[i], y1[i]);
            acc += r * r;
        }
        (acc / c(N as f64)).sqrt()
    }

    fn weighted_norm<M: CellModel<T, N>, const N: usize>(&self, y: &SVector<T, N>, v: &SVector<T, N>) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            let r = v[i] / self.scale::<M, N>(i, y[i], y[i]);
            acc += r * r;
        }
        (acc / c(N as f64)).sqrt()
    }

    /// Negative linear mass component beyond ten absolute tolerances.
    pub fn mass_violation<M: CellModel<T, N>, const N: usize>(&self, y: &SVector<T, N>) -> bool {
        let limit = -c::<T>(10.0) * self.abs_mass;
        (0..N).any(|i| M::is_mass(i) && !M::log_scaled(i) && y[i] < limit)
    }
}

/// Starting step from the local derivative scale, third-order variant.
pub(crate) fn initial_step<M, T, const N: usize>(
    tol: &Tolerances<T>,
    y: &SVector<T, N>,
    f0: &SVector<T, N>,
) -> T
where
    T: Real,
    M: CellModel<T, N>,
{
    let d0 = tol.weighted_norm::<M, N>(y, y);
    let d1 = tol.weighted_norm::<M, N>(y, f0);
    let h = if d0 < c(1e-5) || d1 < c(1e-5) {
        c(1e-6)
    } else {
        c::<T>(0.01) * d0 / d1
    };
    h.min(tol.max_step).max(c(1e-12))
}

/// Outcome of integrating across one output interval, in integration
/// coordinates.
#[derive(Debug)]
pub(crate) struct Interval<T: Real, const N: usize> {
    pub y: SVector<T, N>,
    pub f_end: SVector<T, N>,
    pub h_next: T,
    pub steps: Vec<T>,
    pub floor_hit: bool,
    /// Time and cause when the step size collapsed before `t1`; `y` is then
    /// the last accepted state.
    pub stall: Option<(T, String)>,
}

impl<T: Real, const N: usize> Interval<T, N> {
    /// The interval, or an integration error if it stalled.
    pub fn complete<M: CellModel<T, N>>(self, rhs: &Rhs<'_, M, T>) -> Result<Self> {
        match self.stall {
            None => Ok(self),
            Some((t, reason)) => Err(Error::Integration {
                t: t.as_f64(),
                reason,
                last_state: rhs.to_physical(&self.y).iter().map(|v| v.as_f64()).collect(),
            }),
        }
    }
}

/// Largest error accepted on a log-scaled component, however small its mass.
const LOG_SCALE_CAP: f64 = 0.1;

/// Adaptive integration from `t0` to `t1` landing exactly on `t1`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adaptive_interval<M, T, const N: usize>(
    rhs: &Rhs<'_, M, T>,
    tol: &Tolerances<T>,
    t0: T,
    t1: T,
    y0: SVector<T, N>,
    f0: SVector<T, N>,
    h_guess: T,
) -> Result<Interval<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let mut t = t0;
    let mut y = y0;
    let mut f = f0;
    let mut h = h_guess.min(tol.max_step);
    let mut steps = Vec::new();
    let mut floor_hit = false;
    let mut attempts = 0usize;
    let mut settles = 0usize;
    let min_step = min_step_at(t1);
    let fail = |t: T, y: &SVector<T, N>, reason: String| Error::Integration {
        t: t.as_f64(),
        reason,
        last_state: rhs.to_physical(y).iter().map(|v| v.as_f64()).collect(),
    };
    let mut lin = linearize(rhs, t, &y, &f)?;
    while t < t1 {
        let remaining = t1 - t;
        let last = h >= remaining * c(0.999_999);
        let step = if last { remaining } else { h };
        attempts += 1;
        if attempts > tol.max_steps {
            return Err(fail(t, &y, format!("exceeded {} step attempts", tol.max_steps)));
        }
        let (accepted, factor) = match trial(rhs, &lin, t, &y, &f, step) {
            Ok(tr) => {
                let err = tol.error_norm::<M, N>(&y, &tr.y, &tr.err);
                if !err.is_finite_val() || tol.mass_violation::<M, N>(&tr.y) {
                    (None, c(0.25))
                } else if err <= T::one() {
                    let factor = if err == T::zero() {
                        c(5.0)
                    } else {
                        (c::<T>(0.9) * err.powf(c(-1.0 / 3.0))).min(c(5.0)).max(c(0.2))
                    };
                    (Some(tr), factor)
                } else {
                    (None, (c::<T>(0.9) * err.powf(c(-1.0 / 3.0))).max(c(0.2)))
                }
            }
            // a stage left the model's domain; retry with a shorter step
            Err(_) => (None, c(0.25)),
        };
        match accepted {
            Some(tr) => {
                floor_hit |= tr.floor_hit;
                steps.push(step);
                t = if last { t1 } else { t + step };
                y = tr.y;
                f = tr.f_end;
                // a landing step shorter than planned says nothing new about h
                h = if last && step < h { h } else { step * factor };
                if t < t1 {
                    lin = linearize(rhs, t, &y, &f)?;
                }
            }
            None => {
                h = step * factor;
                if h < rescue_threshold(t) && settles < MAX_SETTLES {
                    if let Some(ys) = settle_exhausted(rhs, tol, t, &y, &f) {
                        settles += 1;
                        floor_hit = true;
                        y = ys;
                        f = rhs.eval(t, &y)?;
                        lin = linearize(rhs, t, &y, &f)?;
                        h = rescue_threshold(t) * c(10.0);
                        continue;
                    }
                }
                if h < min_step {
                    return Ok(Interval {
                        y,
                        f_end: f,
                        h_next: h,
                        steps,
                        floor_hit,
                        stall: Some((t, format!("step size underflow (h = {:e})", h.as_f64()))),
                    });
                }
            }
        }
    }
    Ok(Interval {
        y,
        f_end: f,
        h_next: h.min(tol.max_step),
        steps,
        floor_hit,
        stall: None,
    })
}

/// Smallest step that still advances `t` meaningfully.
fn min_step_at<T: Real>(t: T) -> T {
    (c::<T>(16.0) * T::default_epsilon() * t.abs()).max(T::min_positive())
}

/// Rosenbrock steps shorter than this (relative to `max(1, |t|)`) hand
/// over to [`settle_exhausted`].
const RESCUE_BELOW: f64 = 1e-10;

/// Projections allowed per interval before giving up.
const MAX_SETTLES: usize = 64;

fn rescue_threshold<T: Real>(t: T) -> T {
    c::<T>(RESCUE_BELOW) * t.abs().max(T::one())
}

/// A minor species drained at a finite mass rate runs off to minus infinity
/// in log coordinates in finite time, faster than the clock can resolve.
/// Once its mass is below the absolute tolerance the transit carries no
/// information, so the fastest such species is placed directly at its
/// quasi-equilibrium: the root of its own rate with every other component
/// held fixed.
///
/// Returns `None` when no component qualifies or no root is bracketed.
fn settle_exhausted<M, T, const N: usize>(
    rhs: &Rhs<'_, M, T>,
    tol: &Tolerances<T>,
    t: T,
    y: &SVector<T, N>,
    f: &SVector<T, N>,
) -> Option<SVector<T, N>>
where
    T: Real,
    M: CellModel<T, N>,
{
    let i = (0..N)
        .filter(|&i| M::log_scaled(i) && y[i].exp() < tol.abs_mass && f[i] != T::zero())
        .max_by(|&a, &b| f[a].abs().partial_cmp(&f[b].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
    let down = f[i] < T::zero();
    // The rate falls as the species' own mass rises. A probe is past the
    // root when the rate has changed sign or the state left the domain.
    let past = |zi: T| -> bool {
        let mut z = *y;
        z[i] = zi;
        match rhs.eval(t, &z) {
            Ok(g) if down => g[i] >= T::zero(),
            Ok(g) => g[i] <= T::zero(),
            Err(_) => true,
        }
    };
    // `near` stays on the starting side of the root, `far` beyond it
    let mut near = y[i];
    let mut far = None;
    let mut width = T::one();
    for _ in 0..12 {
        let probe = if down { y[i] - width } else { y[i] + width };
        if past(probe) {
            far = Some(probe);
            break;
        }
        near = probe;
        width *= c(2.0);
    }
    let mut far = far?;
    for _ in 0..200 {
        let mid = (near + far) * c(0.5);
        if (far - near).abs() <= c(1e-12) || mid == near || mid == far {
            break;
        }
        if past(mid) {
            far = mid;
        } else {
            near = mid;
        }
    }
    let mut z = *y;
    z[i] = near;
    rhs.eval(t, &z).ok()?;
    Some(z)
}

/// Error norm above which a replayed step is split in half.
const REPLAY_SPLIT: f64 = 100.0;

/// Replays a list of step sizes. A step whose error estimate exceeds the
/// tolerance by more than [`REPLAY_SPLIT`], or that leaves the domain, is
/// bisected until it passes, so runs started close to the recorded one
/// follow exactly the recorded schedule.
pub(crate) fn fixed_interval<M, T, const N: usize>(
    rhs: &Rhs<'_, M, T>,
    tol: &Tolerances<T>,
    t0: T,
    y0: SVector<T, N>,
    f0: SVector<T, N>,
    steps: &[T],
) -> Result<(SVector<T, N>, SVector<T, N>, bool)>
where
    T: Real,
    M: CellModel<T, N>,
{
    let mut t = t0;
    let mut y = y0;
    let mut f = f0;
    let mut floor_hit = false;
    let mut pending: Vec<T> = steps.iter().rev().copied().collect();
    let mut attempts = 0usize;
    let mut settles = 0usize;
    while let Some(h) = pending.pop() {
        attempts += 1;
        if attempts > tol.max_steps {
            return Err(Error::Integration {
                t: t.as_f64(),
                reason: format!("replay exceeded {} step attempts", tol.max_steps),
                last_state: y.iter().map(|v| v.as_f64()).collect(),
            });
        }
        let lin = linearize(rhs, t, &y, &f)?;
        let accepted = trial(rhs, &lin, t, &y, &f, h).ok().filter(|tr| {
            let err = tol.error_norm::<M, N>(&y, &tr.y, &tr.err);
            err.is_finite_val() && err <= c(REPLAY_SPLIT) && !tol.mass_violation::<M, N>(&tr.y)
        });
        match accepted {
            Some(tr) => {
                floor_hit |= tr.floor_hit;
                y = tr.y;
                f = tr.f_end;
                t += h;
            }
            None => {
                let half = h * c(0.5);
                if half < rescue_threshold(t) {
                    let ys = (settles < MAX_SETTLES)
                        .then(|| settle_exhausted(rhs, tol, t, &y, &f))
                        .flatten()
                        .ok_or_else(|| Error::Integration {
                            t: t.as_f64(),
                            reason: format!("replay step underflow (h = {:e})", half.as_f64()),
                            last_state: y.iter().map(|v| v.as_f64()).collect(),
                        })?;
                    settles += 1;
                    floor_hit = true;
                    y = ys;
                    f = rhs.eval(t, &y)?;
                    pending.push(h);                } else {
                    pending.push(half);
                    pending.push(half);
                }
            }
        }
    }
    Ok((y, f, floor_hit))
}
