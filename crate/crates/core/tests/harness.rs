use std::path::PathBuf;

use lis_core::harness::csv_io::{read_table, write_estimation, write_observability, write_trajectory, STATE_NAMES};
use lis_core::harness::{
    make_scenario, reduced_sweep, reference_discharge, run_scenario, ExperimentConfig, GaussianNoise, Plateau,
};
use lis_core::integrator::{simulate, IntegratorConfig};
use lis_core::model::{CurrentProfile, FullState, ModelOrder, ReducedModel};
use lis_core::Error;
use nalgebra::SVector;

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

#[test]
fn shipped_config_is_the_default() {
    let cfg = ExperimentConfig::load(&shipped()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.model.kp, 22.0);
    assert_eq!(cfg.model.gamma, 0.4832);
    assert_eq!(cfg.model.omega, 0.6133);
    assert_eq!(cfg.observability.epsilon, 1e-6);
    assert_eq!(cfg.ukf.beta, 0.01);
    let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn invalid_file_values_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"model": {"kp": -1.0}}"#).unwrap();
    match ExperimentConfig::load(&path) {
        Err(Error::Config { field, .. }) => assert!(field.contains("kp"), "{field}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(matches!(ExperimentConfig::load(&dir.path().join("missing.json")), Err(Error::Io(_))));
}

#[test]
fn noise_std_is_within_two_percent() {
    let s = GaussianNoise::new(11).sequence(100_000, 5e-3);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (s.len() - 1) as f64;
    assert!((var.sqrt() / 5e-3 - 1.0).abs() < 0.02);
}

#[test]
fn trajectory_csv_parses_back() {
    let cfg = ExperimentConfig::default();
    let s0 = FullState::initial(&cfg.model);
    let run = IntegratorConfig {
        t_end: 300.0,
        output_interval: 10.0,
        ..Default::default()
    };
    let reduced = ReducedModel::new(&cfg.model, s0.total_mass());
    let x0 = SVector::<f64, 5>::from_column_slice(&s0.m);
    let traj = simulate(&reduced, &x0, &CurrentProfile::constant(1.0), &run).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &reduced, &traj).unwrap();
    let table = read_table(buf.as_slice()).unwrap();
    let mut header = vec!["t", "I", "V"];
    header.extend(STATE_NAMES);
    assert_eq!(table.header, header);
    let v = table.column("V").unwrap();
    let alpha = table.column("alpha").unwrap();
    for k in 0..traj.len() {
        assert!((v[k] - traj.voltage[k]).abs() <= 1e-11 * traj.voltage[k]);
        assert!(alpha[k] > 0.99 && alpha[k] <= 1.0 + 1e-9);
    }
    assert_eq!(table.column("t").unwrap(), traj.times);
}

#[test]
fn observability_csv_has_a_row_per_checkpoint_and_state() {
    let cfg = ExperimentConfig::default();
    let reference = reference_discharge(&cfg).unwrap();
    let sweep = reduced_sweep(&cfg, &reference, &CurrentProfile::constant(1.0), &cfg.observability).unwrap();
    let mut buf = Vec::new();
    write_observability(&mut buf, &sweep.report).unwrap();
    let table = read_table(buf.as_slice()).unwrap();
    assert_eq!(table.header, ["checkpoint", "variable", "std_g"]);
    assert_eq!(table.rows.len(), 25);
    assert!(table.column("std_g").unwrap().iter().all(|s| *s >= 0.0 && s.is_finite()));
    assert_eq!(table.rows[7][0], "2");
    assert_eq!(table.rows[7][1], "m3");
}

#[test]
fn estimation_csv_is_reparseable_and_byte_identical() {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.horizon = 20.0;
    let reference = reference_discharge(&cfg).unwrap();
    let emit = || {
        let scenario = make_scenario(&cfg, &reference, Plateau::Low, ModelOrder::Full).unwrap();
        let report = run_scenario(&cfg, &scenario).unwrap();
        let mut buf = Vec::new();
        write_estimation(&mut buf, &report).unwrap();
        buf
    };
    let (a, b) = (emit(), emit());
    assert_eq!(a, b);
    let table = read_table(a.as_slice()).unwrap();
    assert_eq!(table.header.len(), 3 + 3 * 7);
    assert_eq!(&table.header[..4], ["t", "V_meas", "V_hat", "m1_true"]);
    assert_eq!(table.header.last().unwrap(), "err_alpha");
    assert_eq!(table.rows.len(), 21);
    for name in &table.header {
        assert!(table.column(name).unwrap().iter().all(|x| x.is_finite()), "{name}");
    }
    let truth = table.column("msp_true").unwrap();
    let est = table.column("msp_hat").unwrap();
    let err = table.column("err_msp").unwrap();
    for k in 0..truth.len() {
        assert!((err[k] - (est[k] - truth[k]).abs()).abs() < 1e-10);
    }
}

#[test]
fn scenario_truth_starts_on_the_reference() {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.horizon = 5.0;
    let reference = reference_discharge(&cfg).unwrap();
    for (plateau, n) in [(Plateau::High, 0), (Plateau::Low, 3)] {
        let s = make_scenario(&cfg, &reference, plateau, ModelOrder::Reduced).unwrap();
        assert_eq!(s.record.truth[0], reference.checkpoint_state(n));
        assert_eq!(s.mtot, reference.checkpoint_state(n).total_mass());
    }
}
