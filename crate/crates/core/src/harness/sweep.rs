//! Observability bounds at the five reference checkpoints.

use nalgebra::SVector;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::scenario::Reference;
use crate::error::Result;
use crate::integrator::IntegratorConfig;
use crate::model::{CellModel, CurrentProfile, FullModel, ReducedModel};
use crate::observability::{empirical_gramian, fisher_and_crlb, CheckpointReport, ObservabilityConfig, ObservabilityReport};

/// Bounds at the five checkpoints and the condition number of each Fisher
/// matrix.
pub struct Sweep<const N: usize> {
    pub report: ObservabilityReport<f64, N>,
    pub conditions: Vec<f64>,
}

fn sweep<M: CellModel<f64, N> + Sync, const N: usize>(
    models: &[M],
    states: &[(f64, SVector<f64, N>)],
    profile: &CurrentProfile<f64>,
    ocfg: &ObservabilityConfig,
    icfg: &IntegratorConfig,
) -> Result<Sweep<N>> {
    let checkpoints = states
        .par_iter()
        .zip(models)
        .enumerate()
        .map(|(n, (&(time, state), model))| {
            let gramian = empirical_gramian(model, &state, profile, ocfg, icfg)?;
            let fisher = fisher_and_crlb(&gramian.matrix, ocfg)?;
            Ok(CheckpointReport {
                id: n + 1,
                time,
                state,
                gramian,
                fisher,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let conditions = checkpoints.iter().map(|c| c.fisher.condition).collect();
    Ok(Sweep {
        report: ObservabilityReport { checkpoints },
        conditions,
    })
}

/// Full-model bounds at the reference checkpoints.
pub fn full_sweep(
    cfg: &ExperimentConfig,
    reference: &Reference,
    profile: &CurrentProfile<f64>,
    ocfg: &ObservabilityConfig,
) -> Result<Sweep<7>> {
    let states: Vec<_> = (0..5)
        .map(|n| (reference.checkpoint_time(n), reference.checkpoint_state(n).to_vector()))
        .collect();
    let models = vec![FullModel::new(&cfg.model); 5];
    sweep(&models, &states, profile, ocfg, &cfg.integrator)
}

/// Reduced-model bounds at the reference checkpoints, each with the exact
/// total mass of its checkpoint state.
pub fn reduced_sweep(
    cfg: &ExperimentConfig,
    reference: &Reference,
    profile: &CurrentProfile<f64>,
    ocfg: &ObservabilityConfig,
) -> Result<Sweep<5>> {
    let full: Vec<_> = (0..5).map(|n| reference.checkpoint_state(n)).collect();
    let models: Vec<_> = full.iter().map(|s| ReducedModel::new(&cfg.model, s.total_mass())).collect();
    let states: Vec<_> = full
        .iter()
        .enumerate()
        .map(|(n, s)| (reference.checkpoint_time(n), SVector::<f64, 5>::from_column_slice(&s.m)))
        .collect();
    sweep(&models, &states, profile, ocfg, &cfg.integrator)
}

