//! Synthetic truth, noisy measurements and filter runs.

use nalgebra::SVector;

use super::config::{ExperimentConfig, Plateau};
use super::noise::GaussianNoise;
use crate::error::{Error, Result};
use crate::estimator::{run_estimation, CellSystem, EstimationReport, MeasurementRecord};
use crate::integrator::{simulate, IntegratorConfig, Trajectory};
use crate::model::{CellModel, CurrentProfile, FullModel, FullState, ModelOrder, ReducedModel};
use crate::observability::{find_checkpoints, Checkpoints};

/// Constant-current discharge from full charge with its checkpoints.
#[derive(Debug, Clone)]
pub struct Reference {
    pub trajectory: Trajectory<f64, 7>,
    pub checkpoints: Checkpoints,
}

impl Reference {
    pub fn checkpoint_state(&self, n: usize) -> FullState<f64> {
        FullState::from_vector(&self.trajectory.states[self.checkpoints.indices[n]])
    }

    pub fn checkpoint_time(&self, n: usize) -> f64 {
        self.trajectory.times[self.checkpoints.indices[n]]
    }
}

pub fn reference_discharge(cfg: &ExperimentConfig) -> Result<Reference> {
    let model = FullModel::new(&cfg.model);
    let x0 = FullState::initial(&cfg.model).to_vector();
    let profile = CurrentProfile::constant(cfg.scenario.reference_current);
    let trajectory = simulate(&model, &x0, &profile, &cfg.integrator)?;
    let checkpoints = find_checkpoints(&trajectory, &cfg.observability)?;
    Ok(Reference {
        trajectory,
        checkpoints,
    })
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub order: ModelOrder,
    pub plateau: Plateau,
    /// Time of the starting checkpoint on the reference discharge [s].
    pub start_time: f64,
    pub record: MeasurementRecord<f64>,
    /// Exact total sulfur mass of the truth, known to the reduced filter.
    pub mtot: f64,
    /// Initial estimate; the reduced filter uses only the dissolved masses.
    pub guess: FullState<f64>,
}

/// Truth starts at checkpoint 1 (high plateau) or 4 (low plateau) of the
/// reference discharge and runs `scenario.horizon` seconds under
/// `scenario.profile`, sampled every `ukf.ukf_step`.
pub fn make_scenario(cfg: &ExperimentConfig, reference: &Reference, plateau: Plateau, order: ModelOrder) -> Result<Scenario> {
    let n = match plateau {
        Plateau::High => 0,
        Plateau::Low => 3,
    };
    let truth0 = reference.checkpoint_state(n);
    let dt = cfg.ukf.ukf_step;
    let steps = (cfg.scenario.horizon / dt).round() as usize;
    let run = IntegratorConfig {
        output_interval: dt,
        t_end: steps as f64 * dt,
        ..cfg.integrator.without_stops()
    };
    let model = FullModel::new(&cfg.model);
    let profile = &cfg.scenario.profile;
    let truth = simulate(&model, &truth0.to_vector(), profile, &run)?;
    if truth.len() != steps + 1 {
        return Err(Error::Shape(format!(
            "truth run returned {} samples, expected {}",
            truth.len(),
            steps + 1
        )));
    }
    let mut noise = GaussianNoise::new(cfg.scenario.seed);
    let voltages = truth.voltage.iter().map(|v| v + noise.sample(cfg.ukf.sigma_v)).collect();
    let record = MeasurementRecord {
        times: truth.times.clone(),
        currents: truth.current.clone(),
        voltages,
        truth: truth.states.iter().map(FullState::from_vector).collect(),
    };
    let mtot = truth0.total_mass();
    let p = &cfg.scenario.perturbation;
    let mut guess = truth0;
    for (m, d) in guess.m.iter_mut().zip(p.delta) {
        *m *= 1.0 + d;
    }
    guess.msp = (truth0.msp + p.msp_offset * mtot).max(0.0);
    guess.alpha = (truth0.alpha + p.alpha_offset).clamp(0.0, 1.0);
    Ok(Scenario {
        order,
        plateau,
        start_time: reference.checkpoint_time(n),
        record,
        mtot,
        guess,
    })
}

/// Runs the filter of the scenario's model order.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<EstimationReport<f64>> {
    match scenario.order {
        ModelOrder::Full => {
            let model = FullModel::new(&cfg.model);
            let system = CellSystem::new(&model, &cfg.integrator);
            let x0 = scenario.guess.to_vector();
            run_estimation(&system, &scenario.record, &x0, &cfg.ukf, |x| Ok(FullState::from_vector(x)))
        }
        ModelOrder::Reduced => {
            let model = ReducedModel::extended(&cfg.model, scenario.mtot);
            let system = CellSystem::new(&model, &cfg.integrator);
            let x0 = SVector::<f64, 5>::from_column_slice(&scenario.guess.m);
            run_estimation(&system, &scenario.record, &x0, &cfg.ukf, |x| model.expand(x))
        }
    }
}
