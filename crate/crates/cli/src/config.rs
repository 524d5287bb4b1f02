use balquant::{AipwConfig, EstimatorConfig, WeightConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Proposed,
    Aipw,
    Both,
}

impl EstimatorChoice {
    pub fn proposed(self) -> bool {
        matches!(self, EstimatorChoice::Proposed | EstimatorChoice::Both)
    }

    pub fn aipw(self) -> bool {
        matches!(self, EstimatorChoice::Aipw | EstimatorChoice::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tau_level: f64,
    pub alpha: f64,
    pub seed: u64,
    pub c0: f64,
    pub lambda_grid: Option<Vec<f64>>,
    pub cv_folds: usize,
    pub standardize_response: bool,
    pub expand_interactions: bool,
    pub estimator: EstimatorChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau_level: 0.5,
            alpha: 0.05,
            seed: 0,
            c0: 0.10,
            lambda_grid: None,
            cv_folds: 10,
            standardize_response: false,
            expand_interactions: false,
            estimator: EstimatorChoice::Proposed,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Input(msg));
        if !(self.tau_level > 0.0 && self.tau_level < 1.0) {
            return bad(format!("--tau must lie in (0, 1), got {}", self.tau_level));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("--alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("--c0 must be positive, got {}", self.c0));
        }
        if self.cv_folds < 2 {
            return bad(format!("--folds must be at least 2, got {}", self.cv_folds));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return bad("--lambda-grid needs positive finite values".into());
            }
        }
        Ok(())
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let weights = WeightConfig {
            c0: self.c0,
            ..WeightConfig::default()
        };
        EstimatorConfig {
            tau_level: self.tau_level,
            alpha: self.alpha,
            seed: self.seed,
            cv_folds: self.cv_folds,
            lambda_grid: self.lambda_grid.clone(),
            standardize_response: self.standardize_response,
            weights,
            ..EstimatorConfig::default()
        }
    }

    pub fn aipw_config(&self) -> AipwConfig {
        AipwConfig {
            base: self.estimator_config(),
            ..AipwConfig::default()
        }
    }
}
