//! The twelve acceptance checks with their pinned tolerances.
//!
//! [`run`] evaluates the whole suite twice, concurrently, and compares the
//! serialised artifacts of both passes for the determinism check.

use nalgebra::Vector1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{ExperimentConfig, Plateau};
use super::csv_io::{fmt_num, write_estimation, write_observability, write_trajectory};
use super::scenario::{make_scenario, reference_discharge, run_scenario, Reference};
use crate::error::{Error, Result};
use crate::estimator::{predict, update, EstimationReport, StateSpace, UkfConfig, UkfState};
use crate::model::{
    nernst_potentials, output_voltage, quadratic_residual, reaction_currents, CurrentProfile, FullModel, FullState,
    ModelOrder, ModelParams, OmegaReference, N_SPECIES,
};
use super::sweep::{full_sweep, reduced_sweep, Sweep};
use crate::observability::{find_dips, ObservabilityConfig};

pub const CONSERVATION_TOL: f64 = 1e-6;
pub const RANDOM_STATES: usize = 1000;
pub const CURRENT_SUM_TOL: f64 = 1e-9;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const SINH_TOL: f64 = 1e-10;
pub const HIGH_BAND: (f64, f64) = (2.3, 2.5);
pub const LOW_BAND: (f64, f64) = (2.0, 2.2);
pub const MAX_CONDITION: f64 = 1e14;
pub const MSP_STD_CP5: f64 = 0.367;
pub const M1_STD_DIP: f64 = 0.005;
pub const BAND_FACTOR: f64 = 3.0;
pub const GROWING_STATES: usize = 6;
pub const REDUCED_SHARE: f64 = 0.6;
pub const KF_STEPS: usize = 1000;
pub const KF_TOL: f64 = 1e-10;
pub const CONVERGENCE_SHARE: f64 = 0.05;
pub const CONVERGENCE_TIME: f64 = 300.0;
pub const PERSISTENCE_HORIZON: f64 = 3600.0;
pub const PERSISTENCE_SHARE: f64 = 0.5;
pub const INNOVATION_WINDOW: f64 = 600.0;
pub const INNOVATION_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: usize, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }

    fn from_result(id: usize, name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(id, name, passed, detail),
            Err(e) => Self::new(id, name, false, format!("error: {e}")),
        }
    }

    /// `[PASS] 7 name: detail`.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// One named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct AcceptanceReport {
    pub criteria: Vec<Criterion>,
    pub artifacts: Vec<Artifact>,
}

impl AcceptanceReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        self.criteria.iter().map(|c| c.line() + "\n").collect()
    }

    /// Writes every artifact and `summary.txt` into `dir`.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.name), &a.bytes).map_err(io)?;
        }
        std::fs::write(dir.join("summary.txt"), self.summary()).map_err(io)
    }
}

/// Runs the suite twice and adds the determinism check.
pub fn run(cfg: &ExperimentConfig) -> Result<AcceptanceReport> {
    cfg.validate()?;
    let (a, b) = rayon::join(|| run_once(cfg), || run_once(cfg));
    let (mut report, other) = (a?, b?);
    let same_criteria = report.criteria == other.criteria;
    let differing: Vec<&str> = report
        .artifacts
        .iter()
        .zip(&other.artifacts)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.name.as_str())
        .collect();
    let passed = same_criteria && differing.is_empty() && report.artifacts.len() == other.artifacts.len();
    let detail = if passed {
        let bytes: usize = report.artifacts.iter().map(|a| a.bytes.len()).sum();
        format!("{} artifacts ({bytes} bytes) identical across two runs", report.artifacts.len())
    } else {
        format!("differing artifacts {differing:?}; criteria identical: {same_criteria}")
    };
    report.criteria.push(Criterion::new(12, "determinism", passed, detail));
    Ok(report)
}

/// Criteria 1 to 11 and the artifacts they produce.
pub fn run_once(cfg: &ExperimentConfig) -> Result<AcceptanceReport> {
    let reference = reference_discharge(cfg)?;
    let mut artifacts = Vec::new();
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &FullModel::new(&cfg.model), &reference.trajectory)?;
    artifacts.push(Artifact {
        name: "reference.csv".into(),
        bytes: buf,
    });

    let mut criteria = vec![
        Criterion::from_result(1, "conservation", conservation(cfg, &reference)),
        Criterion::from_result(2, "reformulation consistency", reformulation(cfg)),
        Criterion::from_result(3, "Butler-Volmer/Nernst equivalence", sinh_equivalence(cfg)),
        Criterion::from_result(4, "discharge-curve shape", curve_shape(cfg, &reference)),
    ];

    let ocfg = ObservabilityConfig {
        max_condition: f64::MAX,
        ..cfg.observability.clone()
    };
    let profile = CurrentProfile::constant(cfg.scenario.reference_current);
    let (full, reduced) = rayon::join(
        || full_sweep(cfg, &reference, &profile, &ocfg),
        || reduced_sweep(cfg, &reference, &profile, &ocfg),
    );
    if let Ok(s) = &full {
        artifacts.extend(sweep_artifacts("observability_full", s)?);
    }
    if let Ok(s) = &reduced {
        artifacts.extend(sweep_artifacts("observability_reduced", s)?);
    }
    criteria.push(Criterion::from_result(5, "observability", invertibility(&full, &reduced)));
    criteria.push(Criterion::from_result(6, "full-model bound structure", full_structure(&full)));
    criteria.push(Criterion::from_result(7, "reduced-model bound structure", reduced_structure(&full, &reduced)));
    criteria.push(Criterion::from_result(8, "linear Kalman filter oracle", linear_oracle(&cfg.ukf)));

    let high = |profile: CurrentProfile<f64>| {
        let mut c = cfg.clone();
        c.scenario.profile = profile;
        estimate(&c, &reference, Plateau::High, ModelOrder::Reduced)
    };
    let ((constant, sine), low) = rayon::join(
        || {
            rayon::join(
                || high(CurrentProfile::constant(1.0)),
                || high(CurrentProfile::sinusoidal(1.0, 1.0, 0.005)),
            )
        },
        || {
            let mut c = cfg.clone();
            c.scenario.horizon = PERSISTENCE_HORIZON;
            c.scenario.profile = CurrentProfile::constant(1.0);
            estimate(&c, &reference, Plateau::Low, ModelOrder::Full).map(|r| (r, c))
        },
    );
    for (name, run) in [
        ("estimate_reduced_high_constant.csv", constant.as_ref().ok().map(|r| &r.0)),
        ("estimate_reduced_high_sinusoidal.csv", sine.as_ref().ok().map(|r| &r.0)),
        ("estimate_full_low_constant.csv", low.as_ref().ok().map(|r| &r.0 .0)),
    ] {
        if let Some(report) = run {
            let mut buf = Vec::new();
            write_estimation(&mut buf, report)?;
            artifacts.push(Artifact {
                name: name.into(),
                bytes: buf,
            });
        }
    }
    criteria.push(Criterion::from_result(
        9,
        "high-plateau convergence",
        constant.and_then(|(r, mtot)| convergence(&r, mtot)),
    ));
    criteria.push(Criterion::from_result(
        10,
        "precipitate-mass persistence",
        low.and_then(|((r, _), c)| persistence(&r, &c)),
    ));
    criteria.push(Criterion::from_result(
        11,
        "sinusoidal robustness",
        sine.and_then(|(r, mtot)| convergence(&r, mtot)),
    ));
    Ok(AcceptanceReport { criteria, artifacts })
}

fn conservation(cfg: &ExperimentConfig, reference: &Reference) -> Result<(bool, String)> {
    let m0 = cfg.model.initial_total_mass();
    let worst = reference
        .trajectory
        .states
        .iter()
        .map(|x| ((0..6).map(|i| x[i]).sum::<f64>() - m0).abs() / m0)
        .fold(0.0, f64::max);
    Ok((
        worst < CONSERVATION_TOL,
        format!(
            "max relative drift {worst:.3e} over {} samples (tol {CONSERVATION_TOL:e})",
            reference.trajectory.len()
        ),
    ))
}

/// Seeded states with masses log-uniform over `[1e-6, 3]` g, precipitate
/// over `[1e-6, 1]` g, porosity uniform over `[0.05, 1]` and currents
/// uniform over `[0, 3]` A.
pub fn random_states(seed: u64, n: usize) -> Vec<(FullState<f64>, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let log_uniform = |lo: f64, hi: f64, rng: &mut ChaCha20Rng| 10f64.powf(rng.random_range(lo.log10()..hi.log10()));
    (0..n)
        .map(|_| {
            let m: [f64; N_SPECIES] = std::array::from_fn(|_| log_uniform(1e-6, 3.0, &mut rng));
            let msp = log_uniform(1e-6, 1.0, &mut rng);
            let alpha = rng.random_range(0.05..1.0);
            let current = rng.random_range(0.0..3.0);
            (FullState { m, msp, alpha }, current)
        })
        .collect()
}

fn reformulation(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let p = &cfg.model;
    let (mut worst_sum, mut worst_res) = (0.0f64, 0.0f64);
    for (s, current) in random_states(cfg.scenario.seed, RANDOM_STATES) {
        let v = output_voltage(&s, current, p)?;
        let currents = reaction_currents(&s, v, p)?;
        let total: f64 = currents.iter().sum();
        let scale = currents.iter().map(|i| i.abs()).sum::<f64>().max(current.abs());
        worst_sum = worst_sum.max((total - current).abs() / scale);
        worst_res = worst_res.max(relative_residual(&s, current, v, p)?);
    }
    Ok((
        worst_sum < CURRENT_SUM_TOL && worst_res < RESIDUAL_TOL,
        format!(
            "{RANDOM_STATES} states: max |sum I_j - I| / scale {worst_sum:.3e} (tol {CURRENT_SUM_TOL:e}), \
             max relative quadratic residual {worst_res:.3e} (tol {RESIDUAL_TOL:e})"
        ),
    ))
}

/// Residual of the charge-balance quadratic divided by the sum of the
/// magnitudes of its terms.
fn relative_residual(s: &FullState<f64>, current: f64, v: f64, p: &ModelParams<f64>) -> Result<f64> {
    let r = quadratic_residual(s, current, v, p)?;
    let area = p.av0 * s.alpha.powf(p.gamma);
    let currents = reaction_currents(s, v, p)?;
    let scale = (currents.iter().map(|i| i.abs()).sum::<f64>() + current.abs()) / area;
    Ok(r.abs() / scale)
}

fn sinh_equivalence(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let mut p = cfg.model.clone();
    p.options.omega_reference = OmegaReference::Current;
    let rt_f = p.gas_r * p.temp / p.faraday;
    let mut worst = 0.0f64;
    for (s, current) in random_states(cfg.scenario.seed, RANDOM_STATES) {
        let v = output_voltage(&s, current, &p)?;
        let currents = reaction_currents(&s, v, &p)?;
        let e = nernst_potentials(&s, &p)?;
        let area = p.av0 * s.alpha.powf(p.gamma);
        for j in 0..currents.len() {
            let want = -2.0 * area * p.i0[j] * ((v - e[j]) / (2.0 * rt_f)).sinh();
            worst = worst.max((currents[j] - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok((
        worst < SINH_TOL,
        format!("{RANDOM_STATES} states, Omega at current masses: max relative deviation {worst:.3e} (tol {SINH_TOL:e})"),
    ))
}

fn curve_shape(cfg: &ExperimentConfig, reference: &Reference) -> Result<(bool, String)> {
    let t = &reference.trajectory;
    let dips = find_dips(&t.voltage, &cfg.observability);
    let idx = reference.checkpoints.indices;
    let range = |a: usize, b: usize| {
        t.voltage[a..=b]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    // plateau samples: between the two checkpoints on each plateau
    let high = range(idx[0], idx[1]);
    let low = range(idx[3], idx[4]);
    let inside = |r: (f64, f64), band: (f64, f64)| r.0 >= band.0 && r.1 <= band.1;
    let passed = dips.len() == 1 && inside(high, HIGH_BAND) && inside(low, LOW_BAND);
    Ok((
        passed,
        format!(
            "{} dip(s); high plateau [{:.4}, {:.4}] V over t = {:.0}..{:.0} s (band {HIGH_BAND:?}); \
             low plateau [{:.4}, {:.4}] V over t = {:.0}..{:.0} s (band {LOW_BAND:?})",
            dips.len(),
            high.0,
            high.1,
            t.times[idx[0]],
            t.times[idx[1]],
            low.0,
            low.1,
            t.times[idx[3]],
            t.times[idx[4]],
        ),
    ))
}

fn sweep_artifacts<const N: usize>(stem: &str, s: &Sweep<N>) -> Result<[Artifact; 2]> {
    let mut buf = Vec::new();
    write_observability(&mut buf, &s.report)?;
    let mut cond = String::from("checkpoint,condition\n");
    for (id, c) in s.conditions.iter().enumerate() {
        cond.push_str(&format!("{},{}\n", id + 1, fmt_num(*c)));
    }
    Ok([
        Artifact {
            name: format!("{stem}.csv"),
            bytes: buf,
        },
        Artifact {
            name: format!("{stem}_condition.csv"),
            bytes: cond.into_bytes(),
        },
    ])
}

fn invertibility(full: &Result<Sweep<7>>, reduced: &Result<Sweep<5>>) -> Result<(bool, String)> {
    let (full, reduced) = (borrow(full)?, borrow(reduced)?);
    let ok = |c: &[f64]| c.iter().all(|&k| k < MAX_CONDITION);
    let show = |c: &[f64]| c.iter().map(|k| format!("{k:.2e}")).collect::<Vec<_>>().join(" ");
    Ok((
        ok(&full.conditions) && ok(&reduced.conditions),
        format!(
            "condition numbers full [{}], reduced [{}] (limit {MAX_CONDITION:e})",
            show(&full.conditions),
            show(&reduced.conditions)
        ),
    ))
}

fn borrow<T>(r: &Result<T>) -> Result<&T> {
    r.as_ref().map_err(|e| Error::Invariant(format!("sweep failed: {e}")))
}

fn within_factor(value: f64, target: f64) -> bool {
    value >= target / BAND_FACTOR && value <= target * BAND_FACTOR
}

fn full_structure(full: &Result<Sweep<7>>) -> Result<(bool, String)> {
    let cps = &borrow(full)?.report.checkpoints;
    let std = |n: usize, i: usize| cps[n].fisher.std[i];
    let msp_max: Vec<bool> = (0..5).map(|n| (0..7).all(|i| std(n, 5) >= std(n, i))).collect();
    let growing = (0..7).filter(|&i| std(3, i) > std(2, i) && std(4, i) > std(2, i)).count();
    let msp5 = std(4, 5);
    let passed = msp_max.iter().all(|&b| b) && growing >= GROWING_STATES && within_factor(msp5, MSP_STD_CP5);
    Ok((
        passed,
        format!(
            "std(msp) largest at checkpoints {:?}; {growing}/7 states grow after the dip (need {GROWING_STATES}); \
             std(msp) at checkpoint 5 = {msp5:.4} g (target {MSP_STD_CP5} g, factor {BAND_FACTOR})",
            (1..=5).filter(|&n| msp_max[n - 1]).collect::<Vec<_>>()
        ),
    ))
}

fn reduced_structure(full: &Result<Sweep<7>>, reduced: &Result<Sweep<5>>) -> Result<(bool, String)> {
    let (f, r) = (&borrow(full)?.report.checkpoints, &borrow(reduced)?.report.checkpoints);
    let smaller = (0..5)
        .flat_map(|n| (0..5).map(move |i| (n, i)))
        .filter(|&(n, i)| r[n].fisher.std[i] < f[n].fisher.std[i])
        .count();
    let m1_dip = r[2].fisher.std[0];
    let share = smaller as f64 / 25.0;
    Ok((
        share >= REDUCED_SHARE && within_factor(m1_dip, M1_STD_DIP),
        format!(
            "{smaller}/25 reduced stds below full (need {:.0}%); std(m1) at the dip = {m1_dip:.4} g \
             (target {M1_STD_DIP} g, factor {BAND_FACTOR})",
            REDUCED_SHARE * 100.0
        ),
    ))
}

/// `x_k = a x_{k-1} + b I`, `V = c x + d I` with no bounds.
#[derive(Debug, Clone, Copy)]
pub struct LinearScalar {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl StateSpace<f64, 1> for LinearScalar {
    fn propagate(&self, x: &Vector1<f64>, current: f64, _: f64) -> Result<Vector1<f64>> {
        Ok(Vector1::new(self.a * x[0] + self.b * current))
    }

    fn measure(&self, x: &Vector1<f64>, current: f64) -> Result<f64> {
        Ok(self.c * x[0] + self.d * current)
    }

    fn bounds(&self) -> (Vector1<f64>, Vector1<f64>) {
        (Vector1::new(f64::NEG_INFINITY), Vector1::new(f64::INFINITY))
    }
}

/// Largest relative gap between the unscented and the classical filter in
/// mean or variance over `steps` seeded steps. The output gain is small so
/// that no update shrinks the variance by orders of magnitude, which would
/// cost both filters the same digits to cancellation.
pub fn linear_kf_gap(cfg: &UkfConfig, steps: usize, seed: u64) -> Result<f64> {
    let sys = LinearScalar {
        a: 0.98,
        b: 0.05,
        c: 0.02,
        d: -0.2,
    };
    let mut noise = super::noise::GaussianNoise::new(seed);
    let x0 = Vector1::new(2.0);
    let mut ukf = UkfState::initial(&x0, cfg);
    let (mut m, mut p) = (x0[0], ukf.covariance[(0, 0)]);
    let mut truth = 1.6;
    let r = cfg.measurement_variance();
    let dt = cfg.ukf_step;
    let mut worst = 0.0f64;
    for k in 0..steps {
        let current = 1.0 + (0.01 * k as f64).sin();
        truth = sys.a * truth + sys.b * current;
        let v = sys.c * truth + sys.d * current + noise.sample(cfg.sigma_v);

        let q = crate::estimator::process_noise(&Vector1::new(m), cfg)[(0, 0)];
        let (mp, pp) = (sys.a * m + sys.b * current, sys.a * sys.a * p + q);
        let s = sys.c * sys.c * pp + r;
        let gain = pp * sys.c / s;
        m = mp + gain * (v - (sys.c * mp + sys.d * current));
        p = pp - gain * gain * s;

        ukf = update(&sys, &predict(&sys, &ukf, current, dt, cfg)?, v, current, cfg)?;
        let gap_m = (ukf.estimate[0] - m).abs() / m.abs().max(1.0);
        let gap_p = (ukf.covariance[(0, 0)] - p).abs() / p.abs();
        worst = worst.max(gap_m).max(gap_p);
    }
    Ok(worst)
}

fn linear_oracle(cfg: &UkfConfig) -> Result<(bool, String)> {
    let gap = linear_kf_gap(cfg, KF_STEPS, 1)?;
    Ok((
        gap < KF_TOL,
        format!("{KF_STEPS} steps: max relative gap in mean and variance {gap:.3e} (tol {KF_TOL:e})"),
    ))
}

fn estimate(
    cfg: &ExperimentConfig,
    reference: &Reference,
    plateau: Plateau,
    order: ModelOrder,
) -> Result<(EstimationReport<f64>, f64)> {
    let scenario = make_scenario(cfg, reference, plateau, order)?;
    Ok((run_scenario(cfg, &scenario)?, scenario.mtot))
}

fn run_note(r: &EstimationReport<f64>) -> String {
    match &r.failure {
        Some(f) => format!("; filter stopped at {f}"),
        None => String::new(),
    }
}

fn convergence(r: &EstimationReport<f64>, mtot: f64) -> Result<(bool, String)> {
    let threshold = CONVERGENCE_SHARE * mtot;
    let times: Vec<Option<f64>> = (0..N_SPECIES).map(|i| r.convergence_time(i, threshold)).collect();
    let end = r.times.last().copied().unwrap_or(0.0);
    let ok = r.failure.is_none() && times.iter().all(|t| matches!(t, Some(t) if *t <= CONVERGENCE_TIME));
    let show: Vec<String> = times
        .iter()
        .map(|t| t.map_or("never".into(), |t| format!("{t:.0}")))
        .collect();
    Ok((
        ok,
        format!(
            "convergence times [{}] s for |error| < {threshold:.4} g (limit {CONVERGENCE_TIME} s), run to t = {end:.0} s{}",
            show.join(", "),
            run_note(r)
        ),
    ))
}

fn persistence(r: &EstimationReport<f64>, cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let end = r.len() - 1;
    let (e0, e1) = (r.errors(0)[5], r.errors(end)[5]);
    let t_end = r.times[end];
    let rms = r.innovation_rms(t_end - INNOVATION_WINDOW);
    let limit = INNOVATION_SIGMAS * cfg.ukf.sigma_v;
    let reached = r.failure.is_none() && t_end >= PERSISTENCE_HORIZON - 1e-9;
    Ok((
        reached && e1 > PERSISTENCE_SHARE * e0 && rms < limit,
        format!(
            "msp error {e0:.4} g at t = 0, {e1:.4} g at t = {t_end:.0} s (need > {PERSISTENCE_SHARE} of initial); \
             innovation RMS over the last {INNOVATION_WINDOW} s {rms:.3e} V (limit {limit:.1e} V){}",
            run_note(r)
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_states_are_seeded_and_valid() {
        let a = random_states(3, 50);
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|(s, i)| s.check().is_ok() && (0.0..3.0).contains(i)));
        let b = random_states(3, 50);
        assert_eq!(a[7].0.to_vector(), b[7].0.to_vector());
    }

    #[test]
    fn criterion_lines_are_stable() {
        let c = Criterion::new(3, "x", false, "d".into());
        assert_eq!(c.line(), "[FAIL]  3 x: d");
    }
}
