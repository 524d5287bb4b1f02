//! Augmented inverse probability weighted comparator.
//!
//! Same estimating equation as the proposed estimator, with weights
//! `wᵢ = 1/(n ĝᵢ)` from an ℓ1-penalized logistic fit of `δ` on `X`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::estimator::{
    adjusted_solve, confidence_interval, pilot_quantile, response_moments, variance_estimate, EstimatorConfig,
};
use crate::lasso::{fit_lasso_cv, fit_logistic_lasso_cv, logistic_probabilities, LassoFit};
use crate::model::ConditionalModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwConfig {
    pub base: EstimatorConfig,
    /// Lower clamp on fitted selection probabilities.
    pub prob_floor: f64,
    /// Divide weights by `Σ_{δ=1} 1/ĝⱼ` instead of `n`.
    pub normalize: bool,
}

impl Default for AipwConfig {
    fn default() -> Self {
        Self {
            base: EstimatorConfig::default(),
            prob_floor: 0.01,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwEstimate {
    pub q_hat: f64,
    pub q_pilot: f64,
    pub sigma2_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub eq_residual: f64,
    /// Logistic slopes `γ̂`.
    pub gamma: Vec<f64>,
    pub intercept: f64,
    /// Clamped `ĝᵢ` for every unit.
    pub fitted_probs: Vec<f64>,
    pub clamp_count: usize,
    /// More than 10% of units were clamped.
    pub heavy_clamping: bool,
    pub separation: bool,
    pub n: usize,
}

impl AipwConfig {
    fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(Error::InvalidInput(format!(
                "probability floor must lie in (0, 1), got {}",
                self.prob_floor
            )));
        }
        Ok(())
    }
}

impl AipwEstimate {
    pub fn std_error(&self) -> f64 {
        (self.sigma2_hat / self.n as f64).sqrt()
    }
}

/// Weights over observed units from selection probabilities over all units.
pub fn aipw_weights(data: &Dataset, probs: &[f64], normalize: bool) -> Vec<f64> {
    let inv: Vec<f64> = data.observed_indices().into_iter().map(|i| 1.0 / probs[i]).collect();
    let denom = if normalize { inv.iter().sum() } else { data.n() as f64 };
    inv.into_iter().map(|v| v / denom).collect()
}

/// AIPW fit with the selection probabilities supplied.
pub fn estimate_aipw_with_probs(
    data: &Dataset,
    model: &dyn ConditionalModel,
    beta: &[f64],
    probs: &[f64],
    cfg: &AipwConfig,
) -> Result<(f64, f64, f64, f64)> {
    if probs.len() != data.n() {
        return Err(Error::InvalidInput(format!(
            "expected {} probabilities, got {}",
            data.n(),
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::InvalidInput("selection probabilities must lie in (0, 1]".into()));
    }
    let tau = cfg.base.tau_level;
    let w = aipw_weights(data, probs, cfg.normalize);
    let solved = adjusted_solve(data, model, beta, &w, tau).map_err(|e| e.at(Stage::Solve))?;
    let q_pilot = pilot_quantile(data, model, beta, tau).map_err(|e| e.at(Stage::Pilot))?;
    let var = variance_estimate(data, model, beta, q_pilot, &w).map_err(|e| e.at(Stage::Variance))?;
    Ok((solved.q, solved.residual, q_pilot, var.sigma2))
}

pub fn estimate_aipw(data: &Dataset, model: &dyn ConditionalModel, cfg: &AipwConfig) -> Result<AipwEstimate> {
    cfg.validate()?;
    if cfg.base.standardize_response {
        let (loc, scale) = response_moments(data);
        let mut inner = cfg.clone();
        inner.base.standardize_response = false;
        let mut est = estimate_aipw(&data.with_transformed_response(loc, scale), model, &inner)?;
        est.q_hat = loc + scale * est.q_hat;
        est.q_pilot = loc + scale * est.q_pilot;
        est.ci_lower = loc + scale * est.ci_lower;
        est.ci_upper = loc + scale * est.ci_upper;
        est.sigma2_hat *= scale * scale;
        return Ok(est);
    }
    let base = &cfg.base;
    let fit = fit_lasso_cv(
        data,
        model,
        base.lambda_grid.as_deref(),
        base.cv_folds,
        base.seed,
        &base.lasso,
    )
    .map_err(|e| e.at(Stage::Lasso))?;
    estimate_aipw_from_fit(data, model, &fit, cfg)
}

/// AIPW from an existing outcome-model fit onward.
pub fn estimate_aipw_from_fit(
    data: &Dataset,
    model: &dyn ConditionalModel,
    fit: &LassoFit,
    cfg: &AipwConfig,
) -> Result<AipwEstimate> {
    cfg.validate()?;
    let base = &cfg.base;
    let sel = fit_logistic_lasso_cv(data, base.cv_folds, base.seed, &base.lasso).map_err(|e| e.at(Stage::Selection))?;
    if sel.separation {
        log::warn!("selection model shows separation; fitted probabilities may be extreme");
    }
    let mut clamp_count = 0;
    let probs: Vec<f64> = logistic_probabilities(data, &sel)
        .into_iter()
        .map(|g| {
            if g < cfg.prob_floor {
                clamp_count += 1;
                cfg.prob_floor
            } else {
                g
            }
        })
        .collect();
    let heavy_clamping = clamp_count as f64 > 0.1 * data.n() as f64;
    if heavy_clamping {
        log::warn!(
            "{clamp_count} of {} selection probabilities clamped at {}",
            data.n(),
            cfg.prob_floor
        );
    }
    let (q_hat, eq_residual, q_pilot, sigma2_hat) = estimate_aipw_with_probs(data, model, &fit.beta, &probs, cfg)?;
    let (ci_lower, ci_upper) = confidence_interval(q_hat, sigma2_hat, data.n(), base.alpha);
    Ok(AipwEstimate {
        q_hat,
        q_pilot,
        sigma2_hat,
        ci_lower,
        ci_upper,
        eq_residual,
        gamma: sel.beta,
        intercept: sel.intercept,
        fitted_probs: probs,
        clamp_count,
        heavy_clamping,
        separation: sel.separation,
        n: data.n(),
    })
}
