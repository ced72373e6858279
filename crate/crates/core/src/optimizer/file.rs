//! TOML form of the optimizer settings.

use serde::{Deserialize, Serialize};

use super::loss::{LossConfig, RateModel};
use super::search::OptimizerConfig;
use crate::error::{Error, Result};
use crate::quant::DEFAULT_THRESHOLD;

/// Optimizer settings as read from and written to a text file. Missing keys
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub layers: usize,
    /// `lambda_l = lambda_base * 2^(l - layers)`.
    pub lambda_base: f64,
    pub model: RateModel,
    pub seed: u64,
    pub threshold: f64,
    pub sweeps: usize,
    pub max_evals: usize,
    pub optimize_inverse: bool,
    pub optimize_gamma: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        let base = OptimizerConfig::new(LossConfig::standard(8));
        FitSettings {
            layers: 8,
            lambda_base: 0.2,
            model: RateModel::Exact,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            sweeps: base.sweeps,
            max_evals: base.max_evals,
            optimize_inverse: base.optimize_inverse,
            optimize_gamma: base.optimize_gamma,
        }
    }
}

impl FitSettings {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("fit settings", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fit settings always serialize")
    }

    pub fn config(&self) -> Result<OptimizerConfig> {
        if self.layers == 0 || self.layers > 255 {
            return Err(Error::Config(format!("layer count {} outside 1..=255", self.layers)));
        }
        if !(self.lambda_base > 0.0 && self.lambda_base.is_finite()) {
            return Err(Error::Config(format!("lambda base {} must be positive", self.lambda_base)));
        }
        let mut loss = LossConfig::with_lambda_base(self.layers, self.lambda_base);
        loss.model = self.model;
        loss.seed = self.seed;
        loss.threshold = self.threshold;
        loss.validate()?;
        let mut cfg = OptimizerConfig::new(loss);
        cfg.sweeps = self.sweeps;
        cfg.max_evals = self.max_evals;
        cfg.optimize_inverse = self.optimize_inverse;
        cfg.optimize_gamma = self.optimize_gamma;
        Ok(cfg)
    }
}
