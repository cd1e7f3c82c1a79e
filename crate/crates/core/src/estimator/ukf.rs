//! Sigma points and the predict/update recursion.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use super::{StateSpace, UkfConfig, WeightScheme};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_jittered, floor_eigenvalues, symmetrize};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub mean: Vec<T>,
    pub cov: Vec<T>,
    /// Sum of the mean weights; exactly one for the standard scheme.
    pub mean_total: T,
}

impl<T: Real> Weights<T> {
    pub fn new(n: usize, cfg: &UkfConfig) -> Self {
        let lambda = cfg.lambda(n);
        let spread = n as f64 + lambda;
        let w0 = lambda / spread;
        let wi = match cfg.weights {
            WeightScheme::Standard => 1.0 / (2.0 * spread),
            WeightScheme::AsTypeset => lambda / (2.0 * spread),
        };
        let tail = match cfg.weights {
            WeightScheme::Standard => 1.0 - cfg.beta * cfg.beta + cfg.cov_weight_term,
            WeightScheme::AsTypeset => 1.0 - cfg.beta * cfg.beta - cfg.cov_weight_term,
        };
        let mut mean = vec![T::lit(wi); 2 * n + 1];
        mean[0] = T::lit(w0);
        let mut cov = mean.clone();
        cov[0] = T::lit(w0 + tail);
        let mean_total = match cfg.weights {
            WeightScheme::Standard => T::one(),
            WeightScheme::AsTypeset => T::lit(w0 + 2.0 * n as f64 * wi),
        };
        Self { mean, cov, mean_total }
    }
}

#[derive(Debug, Clone)]
pub struct SigmaPoints<T: Real, const N: usize> {
    /// `2N + 1` points, the centre first.
    pub points: Vec<SVector<T, N>>,
    pub weights: Weights<T>,
}

/// `x` and `x +- sqrt(N + lambda) L e_i` with `L L^T = P`. Points are not
/// projected here.
pub fn sigma_points<T: Real, const N: usize>(
    x: &SVector<T, N>,
    p: &SMatrix<T, N, N>,
    cfg: &UkfConfig,
) -> Result<SigmaPoints<T, N>> {
    let spread = T::lit(N as f64 + cfg.lambda(N));
    if !(spread > T::zero()) {
        return Err(Error::Config {
            field: "beta".into(),
            constraint: format!("N + lambda = {} must be positive", spread.as_f64()),
        });
    }
    let l = if p.iter().all(|v| *v == T::zero()) {
        SMatrix::zeros()
    } else {
        cholesky_jittered(p)? * spread.sqrt()
    };
    let mut points = Vec::with_capacity(2 * N + 1);
    points.push(*x);
    for i in 0..N {
        points.push(x + l.column(i));
    }
    for i in 0..N {
        points.push(x - l.column(i));
    }
    Ok(SigmaPoints {
        points,
        weights: Weights::new(N, cfg),
    })
}

#[derive(Debug, Clone)]
pub struct UkfState<T: Real, const N: usize> {
    pub estimate: SVector<T, N>,
    pub covariance: SMatrix<T, N, N>,
    pub step: usize,
    /// `V_k - V_hat_k` of the last update.
    pub innovation: T,
}

impl<T: Real, const N: usize> UkfState<T, N> {
    /// `P0 = diag(p0_rel * x0)`.
    pub fn initial(x0: &SVector<T, N>, cfg: &UkfConfig) -> Self {
        Self {
            estimate: *x0,
            covariance: SMatrix::from_diagonal(&x0.map(|v| T::lit(cfg.p0_rel) * v.abs())),
            step: 0,
            innovation: T::zero(),
        }
    }
}

/// `diag(Q) = min(q_cap_abs, q_cap_rel * x)` with negative entries of `x`
/// treated as zero.
pub fn process_noise<T: Real, const N: usize>(x: &SVector<T, N>, cfg: &UkfConfig) -> SMatrix<T, N, N> {
    SMatrix::from_diagonal(&x.map(|v| (T::lit(cfg.q_cap_rel) * v.max(T::zero())).min(T::lit(cfg.q_cap_abs))))
}

/// `sum_i w_i p_i`, accumulated as offsets from the centre point. With a
/// large negative centre weight the direct sum loses about `|w_0|` ulps of
/// the points themselves; the offsets lose them only of the spread.
fn weighted_mean<T: Real, const N: usize>(points: &[SVector<T, N>], w: &Weights<T>) -> SVector<T, N> {
    let c = points[0];
    let offset = points[1..]
        .iter()
        .zip(&w.mean[1..])
        .fold(SVector::<T, N>::zeros(), |acc, (p, &wi)| acc + (p - c) * wi);
    c * w.mean_total + offset
}

/// Share of the room to the nearer bound a clipped point may use.
pub const CLIP_FRACTION: f64 = 0.9;

/// Bound distance in standard deviations of the Gaussian a clipped pair
/// represents.
pub const CLIP_SIGMAS: f64 = 3.0;

/// Moves the centre into the box and shortens each deviation `d_j` of a
/// pair `c +- d` so both points stay strictly feasible and the implied
/// standard deviation `d_j / sqrt(N + lambda)` is at most `1 / CLIP_SIGMAS`
/// of the room left on the nearer side. Pairs stay symmetric about the
/// centre.
pub fn clip_symmetric<T, S, const N: usize>(system: &S, sp: &mut SigmaPoints<T, N>, cfg: &UkfConfig)
where
    T: Real,
    S: StateSpace<T, N>,
{
    let (lo, hi) = system.bounds();
    let spread = T::lit(N as f64 + cfg.lambda(N)).sqrt();
    let share = T::lit(CLIP_FRACTION).min(spread / T::lit(CLIP_SIGMAS));
    let centre = system.project(&sp.points[0]);
    let old = sp.points[0];
    for i in 0..N {
        let mut d = sp.points[1 + i] - old;
        for j in 0..N {
            let room = (centre[j] - lo[j]).min(hi[j] - centre[j]) * share;
            d[j] = d[j].max(-room).min(room);
        }
        sp.points[1 + i] = centre + d;
        sp.points[1 + N + i] = centre - d;
    }
    sp.points[0] = centre;
}

/// Time update over `dt` at constant `current`.
pub fn predict<T, S, const N: usize>(
    system: &S,
    state: &UkfState<T, N>,
    current: T,
    dt: T,
    cfg: &UkfConfig,
) -> Result<UkfState<T, N>>
where
    T: Real,
    S: StateSpace<T, N>,
{
    let mut sp = sigma_points(&state.estimate, &state.covariance, cfg)?;
    clip_symmetric(system, &mut sp, cfg);
    let propagated: Vec<SVector<T, N>> = sp
        .points
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            system.propagate(x, current, dt).map_err(|e| Error::SigmaPoint {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mean = weighted_mean(&propagated, &sp.weights);
    let mut cov = process_noise(&state.estimate, cfg);
    for (x, &w) in propagated.iter().zip(&sp.weights.cov) {
        let d = x - mean;
        cov += d * d.transpose() * w;
    }
    Ok(UkfState {
        estimate: mean,
        covariance: symmetrize(&cov),
        step: state.step + 1,
        innovation: state.innovation,
    })
}

/// Measurement update with voltage `measured` taken at `current`. Sigma
/// points are redrawn from the prior so that `Q` reaches the gain.
pub fn update<T, S, const N: usize>(
    system: &S,
    prior: &UkfState<T, N>,
    measured: T,
    current: T,
    cfg: &UkfConfig,
) -> Result<UkfState<T, N>>
where
    T: Real,
    S: StateSpace<T, N>,
{
    let mut sp = sigma_points(&prior.estimate, &prior.covariance, cfg)?;
    clip_symmetric(system, &mut sp, cfg);
    let z: Vec<T> = sp
        .points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            system.measure(x, current).map_err(|e| Error::SigmaPoint {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let w = &sp.weights;
    let v_hat = z[0] * w.mean_total
        + z[1..]
            .iter()
            .zip(&w.mean[1..])
            .fold(T::zero(), |a, (&zi, &wi)| a + (zi - z[0]) * wi);
    let mut pz = T::lit(cfg.measurement_variance());
    let mut pxz = SVector::<T, N>::zeros();
    for ((x, &zi), &wc) in sp.points.iter().zip(&z).zip(&w.cov) {
        let dz = zi - v_hat;
        pz += wc * dz * dz;
        pxz += (x - sp.points[0]) * (wc * dz);
    }
    if !(pz > T::zero()) || !pz.is_finite_val() {
        return Err(Error::Measurement(pz.as_f64()));
    }
    let gain = pxz / pz;
    let innovation = measured - v_hat;
    let estimate = system.project(&(sp.points[0] + gain * innovation));
    let cov = symmetrize(&(prior.covariance - gain * gain.transpose() * pz));
    // flooring a positive definite matrix is the identity; skipping the
    // round trip keeps the tiny variances of the minor species intact
    let cov = if cholesky(&cov).is_some() {
        cov
    } else {
        floor_eigenvalues(&cov, T::zero())
    };
    Ok(UkfState {
        estimate,
        covariance: cov,
        step: prior.step,
        innovation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cfg() -> UkfConfig {
        UkfConfig::default()
    }

    #[test]
    fn eleven_points_for_five_states() {
        let x = SVector::<f64, 5>::repeat(1.0);
        let p = SMatrix::<f64, 5, 5>::identity() * 0.1;
        let sp = sigma_points(&x, &p, &cfg()).unwrap();
        assert_eq!(sp.points.len(), 11);
        assert!((sp.weights.mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let m = weighted_mean(&sp.points, &sp.weights);
        assert!((m - x).amax() < 1e-9);
    }

    #[test]
    fn diagonal_covariance_gives_axis_aligned_points() {
        let x = Vector3::new(1.0, 2.0, 3.0);
        let p = Matrix3::from_diagonal(&Vector3::new(0.5, 2.0, 8.0));
        let c = cfg();
        let sp = sigma_points(&x, &p, &c).unwrap();
        let spread = 3.0 + c.lambda(3);
        for i in 0..3 {
            let d = sp.points[1 + i] - x;
            for j in 0..3 {
                let want = if i == j { (spread * p[(i, i)]).sqrt() } else { 0.0 };
                assert!((d[j] - want).abs() < 1e-14, "{i} {j}");
            }
        }
    }

    #[test]
    fn unscented_transform_recovers_covariance() {
        let x = Vector3::new(0.3, -1.0, 2.0);
        let p = Matrix3::new(2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.5);
        let sp = sigma_points(&x, &p, &cfg()).unwrap();
        let mean = weighted_mean(&sp.points, &sp.weights);
        // the zeroth covariance weight multiplies a zero deviation
        let mut rec = Matrix3::zeros();
        for (pt, &w) in sp.points.iter().zip(&sp.weights.cov).skip(1) {
            let d = pt - mean;
            rec += d * d.transpose() * w;
        }
        assert!((rec - p).amax() / p.amax() < 1e-10);
    }

    #[test]
    fn weights_satisfy_normalisation() {
        let c = cfg();
        let w = Weights::<f64>::new(7, &c);
        let sm: f64 = w.mean.iter().sum();
        let sc: f64 = w.cov.iter().sum();
        assert!((sm - 1.0).abs() < 1e-9);
        assert!((sc - (1.0 - c.beta * c.beta + c.cov_weight_term) - sm).abs() < 1e-9);
        let typeset = Weights::<f64>::new(7, &UkfConfig {
            weights: WeightScheme::AsTypeset,
            ..c
        });
        assert!((typeset.mean.iter().sum::<f64>() - 1.0).abs() > 1.0);
    }

    #[test]
    fn q_cap_never_exceeds_absolute_ceiling() {
        let x = SVector::<f64, 4>::new(10.0, 1.0, 1e-3, -5.0);
        let q = process_noise(&x, &cfg());
        assert_eq!(q.diagonal(), SVector::<f64, 4>::new(0.005, 0.005, 5e-6, 0.0));
    }
}
