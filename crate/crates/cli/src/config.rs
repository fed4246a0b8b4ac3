//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use syncfv::engine::{Batch, FVConfig, DEFAULT_MAX_BRANCHINGS};
use syncfv::models::{ModelSpec, TestFunction};

use crate::CliError;

/// One experiment, read from JSON. Exactly one of `theta` and `batch_size`
/// must be given; `seed` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelSpec,
    /// Names understood by the model; `"one"` is always added.
    #[serde(default)]
    pub test_functions: Vec<String>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_max_branchings")]
    pub max_branchings: usize,
    /// `θ` used for the oracle side of `validate` and `oracle`; defaults to
    /// `theta`, or `1 - K/N` when the batch size is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_theta: Option<f64>,
    /// Points of the exported survival curve.
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_replicas() -> usize {
    100
}

fn default_max_branchings() -> usize {
    DEFAULT_MAX_BRANCHINGS
}

fn default_curve_points() -> usize {
    201
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            start: 0.1,
            stop: 0.9,
            step: 0.1,
        }
    }
}

/// Pass/fail thresholds of `validate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative window around the oracle variance.
    pub variance_rel: f64,
    /// Relative window around the predicted cost.
    pub cost_rel: f64,
    /// Bound on the mean `|τ_j - t_j|`.
    pub tau_abs: f64,
    /// Minimum fraction of runs with exactly `j_max` resamplings.
    pub jmax_frac: f64,
    /// Bias window in standard errors.
    pub bias_se: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            variance_rel: 0.25,
            cost_rel: 0.05,
            tau_abs: 0.02,
            jmax_frac: 0.95,
            bias_se: 4.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(CliError::Config(
                "seed is mandatory; runs are never seeded from the clock".into(),
            ));
        }
        if self.theta.is_some() == self.batch_size.is_some() {
            return Err(CliError::Config("give exactly one of theta and batch_size".into()));
        }
        if self.replicas < 2 {
            return Err(CliError::Config(format!("replicas must be >= 2, got {}", self.replicas)));
        }
        if let Some(t) = self.oracle_theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Config(format!("oracle_theta must lie in (0, 1), got {t}")));
            }
        }
        self.fv_config()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("checked on load")
    }

    pub fn batch(&self) -> Batch {
        match (self.theta, self.batch_size) {
            (Some(theta), _) => Batch::Theta(theta),
            (None, Some(k)) => Batch::Size(k),
            (None, None) => unreachable!("checked on load"),
        }
    }

    pub fn fv_config(&self) -> Result<FVConfig, CliError> {
        let seed = self.seed.unwrap_or(0);
        FVConfig::new(self.n_particles, self.batch(), self.horizon, seed)
            .map(|c| c.with_max_branchings(self.max_branchings))
            .and_then(|c| c.validate().map(|_| c))
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// `θ` for the oracle.
    pub fn oracle_theta(&self) -> Result<f64, CliError> {
        Ok(match (self.oracle_theta, self.theta) {
            (Some(t), _) | (None, Some(t)) => t,
            (None, None) => self.fv_config()?.survivor_ratio(),
        })
    }

    /// Test-function names with `"one"` first.
    pub fn test_function_names(&self) -> Vec<String> {
        let mut names = vec!["one".to_string()];
        names.extend(self.test_functions.iter().filter(|n| n.as_str() != "one").cloned());
        names
    }

    pub fn resolve_test_functions<M: syncfv::models::ProcessModel>(
        &self,
        model: &M,
    ) -> Result<Vec<TestFunction<M::State>>, CliError> {
        self.test_function_names()
            .iter()
            .map(|name| model.test_function(name).map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PURE_DEATH: &str = r#"{
        "n_particles": 1000, "theta": 0.5, "horizon": 3.0, "seed": 1,
        "model": {"type": "pure_death", "rate": 1.0}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(PURE_DEATH).unwrap();
        assert_eq!(c.replicas, 100);
        assert_eq!(c.max_branchings, DEFAULT_MAX_BRANCHINGS);
        assert_eq!(c.test_function_names(), vec!["one"]);
        assert_eq!(c.oracle_theta().unwrap(), 0.5);
        assert_eq!(c.sweep, SweepGrid::default());
    }

    #[test]
    fn rejects_bad_documents() {
        let missing_seed = PURE_DEATH.replace(r#""seed": 1,"#, "");
        assert!(matches!(ExperimentConfig::from_json(&missing_seed), Err(CliError::Config(m)) if m.contains("seed")));
        let both = PURE_DEATH.replace(r#""theta": 0.5"#, r#""theta": 0.5, "batch_size": 3"#);
        assert!(ExperimentConfig::from_json(&both).is_err());
        let big_k = PURE_DEATH.replace(r#""theta": 0.5"#, r#""batch_size": 1000"#);
        assert!(matches!(ExperimentConfig::from_json(&big_k), Err(CliError::Config(m)) if m.contains("K < N")));
        let unknown = PURE_DEATH.replace(r#""seed": 1"#, r#""seed": 1, "speed": 2"#);
        assert!(ExperimentConfig::from_json(&unknown).is_err());
    }

    #[test]
    fn batch_size_sets_oracle_theta() {
        let c = ExperimentConfig::from_json(&PURE_DEATH.replace(r#""theta": 0.5"#, r#""batch_size": 250"#)).unwrap();
        assert_eq!(c.oracle_theta().unwrap(), 0.75);
    }
}
