//! Debiased estimation of marginal quantiles when responses are missing at
//! random and covariates are high-dimensional.
//!
//! The pipeline fits a complete-case ℓ1-penalized outcome model, solves a
//! pilot quantile equation, builds variance-minimizing balancing weights over
//! observed units, and solves the weighted estimating equation. An augmented
//! inverse probability weighted estimator is provided for comparison, along
//! with a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aipw;
pub mod data;
pub mod error;
pub mod estimator;
pub mod lasso;
pub mod model;
pub mod normal;
pub mod qp;
pub mod simulate;
pub mod weights;

pub use aipw::{estimate_aipw, AipwConfig, AipwEstimate};
pub use data::{Dataset, Matrix};
pub use error::{Error, Result, Stage};
pub use estimator::{
    adjusted_solve, confidence_interval, contrast, contrast_interval, estimate, estimate_from_fit, pilot_quantile,
    variance_estimate, ContrastEstimate, EstimatorConfig, QuantileEstimate, VarianceEstimate,
};
pub use lasso::{fit_lasso, fit_lasso_cv, CvResult, LassoFit, LassoOptions};
pub use model::{ConditionalModel, NormalLinearModel};
pub use simulate::{run_study, DgpKind, DgpSpec, EstimatorKind, McReport, RepOutcome, RepRecord, StudyConfig};
pub use weights::{
    compute_weights, delta_schedule, select_zeta, solve_weights_dual, solve_weights_hard, solve_weights_primal,
    BalanceProblem, WeightConfig, WeightSolution, ZetaRule,
};
