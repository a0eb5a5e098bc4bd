use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tunables of the pipeline. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of partitions K.
    pub k_clusters: usize,
    /// Exponent applied to the min-max normalized affinity.
    pub alpha_power: f64,
    /// Diagonal regularization weight, scaled by the node degree.
    pub lambda_affinity: f64,
    /// Bandwidth of the cosine-consistency edge reweighting; 0 disables it.
    pub beta_reweight: f64,
    /// Outer iterations of the alternating cut.
    pub t_cuts: usize,
    /// Stability constant for volume denominators and the DREAM scale.
    pub epsilon: f64,
    pub seed: u64,
    pub softmax_temperature: f64,
    /// Weight of the local standard deviation in the DREAM standardization.
    pub eta_std: f64,
    /// ELU gain in the DREAM neighbor measure.
    pub lambda_elu: f64,
    pub alpha_rgb: f64,
    pub alpha_depth: f64,
    /// DREAM diffusion steps; 0 skips refinement.
    pub t_ref: usize,
    /// Relative objective change below which the solver stops early.
    pub objective_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_clusters: 32,
            alpha_power: 4.5,
            lambda_affinity: 0.1,
            beta_reweight: 2.0,
            t_cuts: 50,
            epsilon: 1e-8,
            seed: 0,
            softmax_temperature: 1.0,
            eta_std: 0.1,
            lambda_elu: 1.0,
            alpha_rgb: 0.7,
            alpha_depth: 0.3,
            t_ref: 10,
            objective_tol: 1e-7,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedJson(e.to_string()))?;
        if !value.is_object() {
            return Err(Error::MalformedJson("config must be a JSON object".into()));
        }
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::MalformedJson(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        fn violation(field: &'static str, reason: impl Into<String>) -> Error {
            Error::InvariantViolation {
                field,
                reason: reason.into(),
            }
        }
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(violation(
                    field,
                    format!("must be a positive finite number, got {v}"),
                ))
            }
        }
        fn nonnegative(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(violation(
                    field,
                    format!("must be a nonnegative finite number, got {v}"),
                ))
            }
        }

        if self.k_clusters < 2 {
            return Err(violation(
                "k_clusters",
                format!("must be >= 2, got {}", self.k_clusters),
            ));
        }
        if self.k_clusters > 256 {
            return Err(violation(
                "k_clusters",
                "labels must fit in 8 bits (K <= 256)",
            ));
        }
        positive("alpha_power", self.alpha_power)?;
        nonnegative("lambda_affinity", self.lambda_affinity)?;
        nonnegative("beta_reweight", self.beta_reweight)?;
        positive("epsilon", self.epsilon)?;
        positive("softmax_temperature", self.softmax_temperature)?;
        positive("eta_std", self.eta_std)?;
        nonnegative("lambda_elu", self.lambda_elu)?;
        nonnegative("alpha_rgb", self.alpha_rgb)?;
        nonnegative("alpha_depth", self.alpha_depth)?;
        nonnegative("objective_tol", self.objective_tol)?;
        if self.t_ref > 0 && self.alpha_rgb + self.alpha_depth <= 0.0 {
            return Err(violation(
                "alpha_rgb",
                "alpha_rgb + alpha_depth must be > 0 when t_ref > 0",
            ));
        }
        Ok(())
    }

    pub fn reweighting_enabled(&self) -> bool {
        self.beta_reweight > 0.0
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    PipelineConfig::from_json(&fs::read_to_string(path)?)
}
