use lis_core::estimator::{
    clip_symmetric, predict, process_noise, run_estimation, sigma_points, update, CellSystem, MeasurementRecord,
    StateSpace, UkfConfig, UkfState,
};
use lis_core::harness::acceptance::LinearScalar;
use lis_core::harness::{make_scenario, reference_discharge, ExperimentConfig, Plateau};
use lis_core::integrator::{step_discrete, IntegratorConfig};
use lis_core::linalg::symmetric_eigen;
use lis_core::model::{CellModel, FullModel, ModelOrder};
use lis_core::Result;
use nalgebra::{Matrix1, SMatrix, SVector, Vector1, Vector3};
use proptest::prelude::*;

const SYS: LinearScalar = LinearScalar {
    a: 0.97,
    b: 0.1,
    c: 0.8,
    d: -0.05,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Worst relative gaps (mean, variance) of one predict/update against the
/// scalar Kalman filter, and the variance tolerance the state's own
/// rounding allows.
fn kalman_gaps(sys: &LinearScalar, x: f64, p: f64, i: f64, z: f64) -> (f64, f64, f64) {
    let cfg = UkfConfig::default();
    let r = cfg.measurement_variance();
    let state = UkfState {
        estimate: Vector1::new(x),
        covariance: Matrix1::new(p),
        step: 0,
        innovation: 0.0,
    };
    let prior = predict(sys, &state, i, 1.0, &cfg).unwrap();
    let q = process_noise(&Vector1::new(x), &cfg)[(0, 0)];
    let (xm, pm) = (sys.a * x + sys.b * i, sys.a * sys.a * p + q);
    assert!(rel(prior.estimate[0], xm) < 1e-12);
    assert!(rel(prior.covariance[(0, 0)], pm) < 1e-12);

    let post = update(sys, &prior, z, i, &cfg).unwrap();
    let s = sys.c * sys.c * pm + r;
    let xp = xm + pm * sys.c / s * (z - sys.c * xm - sys.d * i);
    let pp = pm * r / s;
    // sigma points resolve their offset from the centre only to an ulp of
    // the centre, and the update divides the variance by pm / pp
    let spread = ((1.0 + cfg.lambda(1)) * pm).sqrt();
    let floor = 4.0 * f64::EPSILON * (xm.abs() / spread) * (pm / pp);
    (rel(post.estimate[0], xp), rel(post.covariance[(0, 0)], pp), floor)
}

#[test]
fn scalar_predict_and_update_match_the_kalman_filter() {
    let cases = [(1.3, 0.2, 0.5, 1.1), (0.4, 1e-3, -1.0, 0.2), (2.5, 0.05, 2.0, 2.0)];
    let weak = LinearScalar { c: 0.02, ..SYS };
    for (x, p, i, z) in cases {
        let (dm, dp, _) = kalman_gaps(&weak, x, p, i, z);
        assert!(dm < 1e-12 && dp < 1e-12, "weak output: {dm:e} {dp:e}");
        let (dm, dp, floor) = kalman_gaps(&SYS, x, p, i, z);
        assert!(dm < 1e-12, "strong output mean: {dm:e}");
        assert!(dp < floor.max(1e-12), "strong output variance: {dp:e} (rounding floor {floor:e})");
    }
}

#[test]
fn huge_measurement_noise_leaves_the_prior_unchanged() {
    let cfg = UkfConfig {
        sigma_v: 1e8,
        ..Default::default()
    };
    let prior = UkfState {
        estimate: Vector1::new(0.9),
        covariance: Matrix1::new(0.3),
        step: 4,
        innovation: 0.0,
    };
    let post = update(&SYS, &prior, 50.0, 1.0, &cfg).unwrap();
    assert!(rel(post.estimate[0], 0.9) < 1e-12);
    assert!(rel(post.covariance[(0, 0)], 0.3) < 1e-12);
}

fn cell_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.horizon = 30.0;
    cfg
}

#[test]
fn degenerate_spread_propagates_the_estimate_exactly() {
    let cfg = cell_config();
    let reference = reference_discharge(&cfg).unwrap();
    let model = FullModel::new(&cfg.model);
    let system = CellSystem::new(&model, &cfg.integrator);
    let ukf = UkfConfig {
        q_cap_abs: 1e-300,
        ..cfg.ukf.clone()
    };
    for n in [0, 3] {
        let x = reference.checkpoint_state(n).to_vector();
        let state = UkfState {
            estimate: x,
            covariance: SMatrix::zeros(),
            step: 0,
            innovation: 0.0,
        };
        let prior = predict(&system, &state, 1.0, 1.0, &ukf).unwrap();
        let direct = step_discrete(&model, &x, 1.0, 1.0, &system.integrator).unwrap();
        for i in 0..7 {
            assert!((prior.estimate[i] - direct[i]).abs() <= 1e-11 * direct[i].abs(), "component {i}");
        }
        assert!(prior.covariance.iter().all(|v| v.abs() <= 1e-300));
    }
}

/// Noiseless record of the scenario's truth.
fn noiseless(cfg: &ExperimentConfig, plateau: Plateau) -> MeasurementRecord<f64> {
    let reference = reference_discharge(cfg).unwrap();
    let mut rec = make_scenario(cfg, &reference, plateau, ModelOrder::Full).unwrap().record;
    let model = FullModel::new(&cfg.model);
    rec.voltages = rec
        .truth
        .iter()
        .zip(&rec.currents)
        .map(|(s, &i)| model.voltage(&s.to_vector(), i).unwrap())
        .collect();
    rec
}

#[test]
fn exact_initialisation_is_a_fixed_point() {
    let cfg = cell_config();
    let model = FullModel::new(&cfg.model);
    let system = CellSystem::new(&model, &cfg.integrator);
    let ukf = UkfConfig {
        q_cap_abs: 1e-300,
        p0_rel: 1e-300,
        ..cfg.ukf.clone()
    };
    let icfg = &cfg.integrator;
    for plateau in [Plateau::High, Plateau::Low] {
        let rec = noiseless(&cfg, plateau);
        let x0 = rec.truth[0].to_vector();
        let report = run_estimation(&system, &rec, &x0, &ukf, |x| Ok(lis_core::model::FullState::from_vector(x))).unwrap();
        assert!(report.failure.is_none());
        for k in 0..report.len() {
            let truth = report.truth[k].to_vector();
            let est = report.estimate[k].to_vector();
            for i in 0..7 {
                let abs = if i == 6 { icfg.abs_tol_alpha } else { icfg.abs_tol_mass };
                let tol = 10.0 * (abs + icfg.rel_tol * truth[i].abs());
                assert!((est[i] - truth[i]).abs() <= tol, "{plateau:?} t = {}: component {i}", report.times[k]);
            }
        }
    }
}

#[test]
fn covariance_stays_symmetric_psd_and_estimates_in_bounds() {
    let cfg = cell_config();
    let reference = reference_discharge(&cfg).unwrap();
    let scenario = make_scenario(&cfg, &reference, Plateau::Low, ModelOrder::Full).unwrap();
    let model = FullModel::new(&cfg.model);
    let system = CellSystem::new(&model, &cfg.integrator);
    let (lo, hi) = StateSpace::<f64, 7>::bounds(&system);
    let rec = &scenario.record;
    let mut state = UkfState::initial(&system.project(&scenario.guess.to_vector()), &cfg.ukf);
    for k in 1..rec.times.len() {
        let prior = predict(&system, &state, rec.currents[k], cfg.ukf.ukf_step, &cfg.ukf).unwrap();
        state = update(&system, &prior, rec.voltages[k], rec.currents[k], &cfg.ukf).unwrap();
        let p = &state.covariance;
        assert_eq!(*p, p.transpose(), "step {k}");
        let (vals, _) = symmetric_eigen(p);
        assert!(vals[0] >= -1e-14 * p.trace(), "step {k}: eigenvalues {vals:?}");
        for i in 0..7 {
            assert!(state.estimate[i] >= lo[i] && state.estimate[i] <= hi[i], "step {k}, component {i}");
        }
    }
}

#[test]
fn filter_runs_are_bit_identical() {
    let cfg = cell_config();
    let reference = reference_discharge(&cfg).unwrap();
    let scenario = make_scenario(&cfg, &reference, Plateau::Low, ModelOrder::Full).unwrap();
    let run = || lis_core::harness::run_scenario(&cfg, &scenario).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.variance, b.variance);
    assert_eq!(a.predicted, b.predicted);
}

/// Identity dynamics inside `[0, 1]^3`.
struct UnitBox;

impl StateSpace<f64, 3> for UnitBox {
    fn propagate(&self, x: &Vector3<f64>, _: f64, _: f64) -> Result<Vector3<f64>> {
        Ok(*x)
    }

    fn measure(&self, x: &Vector3<f64>, _: f64) -> Result<f64> {
        Ok(x.sum())
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::zeros(), Vector3::repeat(1.0))
    }
}

proptest! {
    #[test]
    fn clipped_points_are_feasible_and_symmetric(
        x in prop::array::uniform3(-0.5f64..1.5),
        l in prop::array::uniform3(-2.0f64..2.0),
        d in prop::array::uniform3(1e-6f64..4.0),
        beta in prop_oneof![Just(0.01), Just(0.3), Just(1.0)],
    ) {
        let cfg = UkfConfig { beta, ..Default::default() };
        let v = SVector::<f64, 3>::from(l);
        let p = SMatrix::<f64, 3, 3>::from_diagonal(&Vector3::from(d)) + v * v.transpose();
        let mut sp = sigma_points(&Vector3::from(x), &p, &cfg).unwrap();
        clip_symmetric(&UnitBox, &mut sp, &cfg);
        let centre = sp.points[0];
        prop_assert_eq!(centre, UnitBox.project(&Vector3::from(x)));
        for pt in &sp.points {
            prop_assert!(pt.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
        for i in 0..3 {
            let s = (sp.points[1 + i] - centre) + (sp.points[4 + i] - centre);
            prop_assert!(s.norm() <= 1e-15);
        }
    }
}

#[test]
fn determinism_holds_for_the_integrator_in_the_filter() {
    let cfg = IntegratorConfig::default();
    let p = lis_core::ModelParams64::default();
    let model = FullModel::new(&p);
    let system = CellSystem::new(&model, &cfg);
    let x = lis_core::model::FullState::initial(&p).to_vector();
    assert_eq!(system.propagate(&x, 1.0, 1.0).unwrap(), system.propagate(&x, 1.0, 1.0).unwrap());
}
