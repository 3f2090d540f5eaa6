//! TOML model configuration files.
//!
//! ```toml
//! states   = ["low", "high"]
//! policies = ["1", "2"]
//! Q        = [[-1.0, 1.0], [3.0, -3.0]]
//! lambda   = [1.0, 4.0]
//! marks    = [1.0]            # optional, defaults to a single mark
//! nu       = [[1.0], [1.0]]   # optional, defaults to all ones
//! c        = [[1.0, 0.0], [0.0, 1.0]]
//! c1       = [[0.0, 0.0]]     # optional, d x |A|
//! K        = 0.05             # scalar, |A| x |A| matrix, or m x |A| x |A| tensor
//! rho      = 0.0
//! ```

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelParams, SwitchingModel, ValidationReport};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SwitchCostSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Tensor(Vec<Vec<Vec<f64>>>),
}

/// On-disk layout of a model. Field names follow the usual notation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub states: Vec<String>,
    pub policies: Vec<String>,
    #[serde(rename = "Q")]
    pub generator: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub marks: Option<Vec<f64>>,
    pub nu: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub c1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "K")]
    pub switch_cost: SwitchCostSpec,
    #[serde(default)]
    pub rho: f64,
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Expands optional fields and broadcasts `K`.
    pub fn into_params(self) -> Result<ModelParams<f64>, ConfigError> {
        let m = self.states.len();
        let na = self.policies.len();
        let marks = self.marks.unwrap_or_else(|| vec![1.0]);
        let mark_dist = match self.nu {
            Some(nu) => nu,
            None if marks.len() == 1 => vec![vec![1.0]; m],
            None => {
                return Err(ConfigError::Shape(format!(
                    "nu is required when more than one mark is given ({} marks)",
                    marks.len()
                )))
            }
        };
        let switch_cost = match self.switch_cost {
            SwitchCostSpec::Scalar(k) => ModelParams::uniform_switch_cost(m, na, k),
            SwitchCostSpec::Matrix(k) => ModelParams::broadcast_switch_cost(m, &k),
            SwitchCostSpec::Tensor(k) => k,
        };
        Ok(ModelParams {
            states: self.states,
            generator: self.generator,
            intensities: self.lambda,
            marks,
            mark_dist,
            policies: self.policies,
            running_cost: self.c,
            arrival_cost: self.c1,
            switch_cost,
            discount: self.rho,
        })
    }

    pub fn build<T: Scalar>(self) -> Result<SwitchingModel<T>, ConfigError> {
        let p = self.into_params()?;
        Ok(SwitchingModel::validate(p.cast())?)
    }
}

/// Reads and validates a model file.
pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<SwitchingModel<T>, ConfigError> {
    ModelConfig::load(path)?.build()
}

/// Parses and validates a model from TOML text.
pub fn parse_model<T: Scalar>(text: &str) -> Result<SwitchingModel<T>, ConfigError> {
    ModelConfig::from_toml(text)?.build()
}

/// Hex SHA-256 of the model's canonical JSON form. Independent of how the
/// source file was formatted or which `K` shorthand it used.
pub fn content_hash<T: Scalar>(model: &SwitchingModel<T>) -> String {
    let p: ModelParams<f64> = model.params().cast();
    let canonical = serde_json::json!({
        "states": p.states,
        "policies": p.policies,
        "Q": p.generator,
        "lambda": p.intensities,
        "marks": p.marks,
        "nu": p.mark_dist,
        "c": p.running_cost,
        "c1": p.arrival_cost,
        "K": p.switch_cost,
        "rho": p.discount,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
