//! Experiment configuration: one JSON document with a block per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::UkfConfig;
use crate::integrator::IntegratorConfig;
use crate::model::{CurrentProfile, ModelOrder, ModelParams, N_SPECIES};
use crate::observability::ObservabilityConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Plateau {
    #[default]
    High,
    Low,
}

impl std::fmt::Display for Plateau {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Plateau::High => "high",
            Plateau::Low => "low",
        })
    }
}

impl std::str::FromStr for Plateau {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Self::High),
            "low" => Ok(Self::Low),
            _ => Err(Error::Config {
                field: "plateau".into(),
                constraint: format!("must be `high` or `low` (got `{s}`)"),
            }),
        }
    }
}

/// Initial-guess error of the filter relative to the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// `m_hat_i = m_i (1 + delta_i)`.
    pub delta: [f64; N_SPECIES],
    /// Full model: `msp_hat = msp + msp_offset * M_tot`.
    pub msp_offset: f64,
    /// Full model: `alpha_hat = clamp(alpha + alpha_offset, 0, 1)`.
    pub alpha_offset: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            delta: [0.2, -0.2, 0.2, -0.2, 0.2],
            msp_offset: 0.1,
            alpha_offset: -0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model_order: ModelOrder,
    pub plateau: Plateau,
    /// Current applied during estimation.
    pub profile: CurrentProfile<f64>,
    /// Constant current of the reference discharge that places the
    /// checkpoints [A].
    pub reference_current: f64,
    /// Estimation horizon [s].
    pub horizon: f64,
    pub seed: u64,
    pub perturbation: Perturbation,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model_order: ModelOrder::Full,
            plateau: Plateau::High,
            profile: CurrentProfile::constant(1.0),
            reference_current: 1.0,
            horizon: 3600.0,
            seed: 2024,
            perturbation: Perturbation::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, constraint: String| {
            Err(Error::Config {
                field: field.into(),
                constraint,
            })
        };
        if !(self.reference_current > 0.0 && self.reference_current.is_finite()) {
            return bad(
                "scenario.reference_current",
                format!("must be a positive discharge current (got {})", self.reference_current),
            );
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("scenario.horizon", format!("must be positive (got {})", self.horizon));
        }
        if let Some(d) = self.perturbation.delta.iter().find(|d| !(**d > -1.0 && d.is_finite())) {
            return bad("scenario.perturbation.delta", format!("entries must exceed -1 (got {d})"));
        }
        for (field, v) in [
            ("scenario.perturbation.msp_offset", self.perturbation.msp_offset),
            ("scenario.perturbation.alpha_offset", self.perturbation.alpha_offset),
        ] {
            if !v.is_finite() {
                return bad(field, "must be finite".into());
            }
        }
        if let CurrentProfile::Tabulated { times, currents } = &self.profile {
            CurrentProfile::tabulated(times.clone(), currents.clone())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams<f64>,
    pub integrator: IntegratorConfig,
    pub observability: ObservabilityConfig,
    pub ukf: UkfConfig,
    pub scenario: ScenarioConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.integrator.validate()?;
        self.observability.validate()?;
        self.ukf.validate()?;
        self.scenario.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn negative_kp_names_the_field() {
        let err = ExperimentConfig::from_json(r#"{"model": {"kp": -1.0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "kp"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"ukf\": {\"beta\": }\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"ukf": {"betta": 0.1}}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.profile = CurrentProfile::sinusoidal(1.0, 1.0, 0.005);
        cfg.scenario.plateau = Plateau::Low;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }
}
