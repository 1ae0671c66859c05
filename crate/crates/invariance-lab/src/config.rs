//! Experiment configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::ChainModel;
use crate::partition::optimal_beta;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {got}; this build reads version {want}")]
    SchemaVersion { got: u32, want: u32 },
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("model file {path} is missing or unreadable: {source}")]
    ModelFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("model: {0}")]
    Model(String),
}

pub const SCHEMA_VERSION: u32 = 1;

fn default_epsilon() -> f64 {
    0.1
}
fn default_k0() -> u32 {
    4
}
fn default_delta() -> f64 {
    0.5
}
fn default_n_list() -> Vec<u64> {
    vec![1 << 12, 1 << 13, 1 << 14, 1 << 15]
}
fn default_reps() -> usize {
    200
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "crate::config::schema_default")]
    pub schema_version: u32,
    /// Inline model, or a path to a separate model JSON.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ChainModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Island density; defaults to the rate-optimal (1+α)/(1+2α).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_k0")]
    pub k0: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_reps")]
    pub reps_for_cdf: usize,
    #[serde(default)]
    pub seed: u64,
    /// 0 lets the runtime pick.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Adds the compact-support smoothing variable to island sums on both
    /// sides of the probability integral transform.
    #[serde(default)]
    pub smoothing: bool,
}

pub fn schema_default() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                got: cfg.schema_version,
                want: SCHEMA_VERSION,
            });
        }
        Ok(cfg)
    }

    pub fn beta_effective(&self) -> f64 {
        self.beta.unwrap_or_else(|| optimal_beta(self.alpha))
    }

    /// Resolve the model, reading `model_path` when no inline model is given.
    pub fn resolve_model(&self) -> Result<ChainModel, ConfigError> {
        if let Some(model) = &self.model {
            model
                .validate()
                .map_err(|e| ConfigError::Model(e.to_string()))?;
            return Ok(model.clone());
        }
        let path = self.model_path.as_ref().ok_or(ConfigError::Field {
            field: "model",
            message: "either `model` or `model_path` must be given".into(),
        })?;
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::ModelFile {
            path: path.clone(),
            source,
        })?;
        ChainModel::from_json(&text).map_err(|e| ConfigError::Model(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0) {
            return Err(ConfigError::Field {
                field: "alpha",
                message: format!("must be positive, got {}", self.alpha),
            });
        }
        let beta = self.beta_effective();
        if !(beta > 0.0 && beta < 1.0) {
            return Err(ConfigError::Field {
                field: "beta",
                message: format!("must lie in (0,1), got {beta}"),
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon + beta < 1.0) {
            return Err(ConfigError::Field {
                field: "epsilon",
                message: format!(
                    "epsilon must be positive with epsilon + beta < 1, got epsilon={} beta={beta}",
                    self.epsilon
                ),
            });
        }
        if !(self.delta > 0.0) {
            return Err(ConfigError::Field {
                field: "delta",
                message: format!("must be positive, got {}", self.delta),
            });
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(ConfigError::Field {
                field: "n_list",
                message: "must be non-empty with positive entries".into(),
            });
        }
        if self.reps == 0 || self.reps_for_cdf == 0 {
            return Err(ConfigError::Field {
                field: "reps",
                message: "replication counts must be positive".into(),
            });
        }
        if self.k0 == 0 {
            return Err(ConfigError::Field {
                field: "k0",
                message: "k0 must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Rate experiments additionally need β > 1/2.
    pub fn validate_for_rates(&self) -> Result<(), ConfigError> {
        self.validate()?;
        let beta = self.beta_effective();
        if beta <= 0.5 {
            return Err(ConfigError::Field {
                field: "beta",
                message: format!("rate experiments require beta > 1/2, got {beta}"),
            });
        }
        if self.n_list.len() < 4 {
            return Err(ConfigError::Field {
                field: "n_list",
                message: format!(
                    "rate experiments need at least 4 grid points, got {}",
                    self.n_list.len()
                ),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{ArBernoulli, ChainModel};

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model: Some(ChainModel::Ar(ArBernoulli::new(0.5, 0.0).unwrap())),
            model_path: None,
            alpha: 0.5,
            epsilon: 0.1,
            beta: None,
            k0: 4,
            delta: 0.5,
            n_list: vec![1 << 12, 1 << 13, 1 << 14, 1 << 15],
            reps: 100,
            reps_for_cdf: 100,
            seed: 1,
            threads: 0,
            out_dir: PathBuf::from("out"),
            smoothing: false,
        }
    }

    #[test]
    fn beta_defaults_to_optimal() {
        let cfg = base_config();
        assert_eq!(cfg.beta_effective(), 0.75);
        cfg.validate().unwrap();
        cfg.validate_for_rates().unwrap();
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let cfg = base_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut cfg = base_config();
        cfg.epsilon = 0.4; // 0.4 + 0.75 >= 1
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Field { field: "epsilon", .. }));

        let mut cfg2 = base_config();
        cfg2.beta = Some(0.4);
        assert!(cfg2.validate().is_ok());
        assert!(matches!(
            cfg2.validate_for_rates().unwrap_err(),
            ConfigError::Field { field: "beta", .. }
        ));
    }

    #[test]
    fn missing_model_is_reported() {
        let mut cfg = base_config();
        cfg.model = None;
        cfg.model_path = Some(PathBuf::from("/nonexistent/model.json"));
        assert!(matches!(
            cfg.resolve_model().unwrap_err(),
            ConfigError::ModelFile { .. }
        ));
        cfg.model_path = None;
        assert!(matches!(
            cfg.resolve_model().unwrap_err(),
            ConfigError::Field { field: "model", .. }
        ));
    }
}
