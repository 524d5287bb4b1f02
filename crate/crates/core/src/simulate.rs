//! Simulation designs and the Monte Carlo harness.
//!
//! Covariates: `X₁, X₂ ~ U(−5, 5)`, `X₃ … X_p ~ N(0, 1/2)` truncated to
//! `[−5, 5]`. Outcome: `Y | X ~ N(0.25X₁ + 0.125X₂ + 0.25X₃ + 0.125X₄, 1)`,
//! so the marginal median is 0. Selection:
//! `P(δ = 1 | X) = expit(1 − 0.25Z₁ − 0.125Z₂ − 0.25Z₃ − 0.125Z₄)` with
//! `Z = X†` under [`DgpKind::Dgp1`] and `Z = X` under [`DgpKind::Dgp2`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::{estimate_aipw_from_fit, AipwConfig};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result, Stage};
use crate::estimator::{estimate_from_fit, EstimatorConfig};
use crate::lasso::{expit, fit_lasso_cv};
use crate::model::{ConditionalModel, NormalLinearModel};

const SIGNAL: [f64; 4] = [0.25, 0.125, 0.25, 0.125];
const TRUNCATION: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    /// Selection model misspecified on the raw covariates.
    Dgp1,
    /// Selection model linear-logistic in the raw covariates.
    Dgp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub p: usize,
    pub tau_level: f64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, p: usize) -> Result<Self> {
        if p < 4 {
            return Err(Error::InvalidInput(format!("simulation designs need p >= 4, got {p}")));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("simulation designs need n >= 2, got {n}")));
        }
        Ok(Self {
            kind,
            n,
            p,
            tau_level: 0.5,
        })
    }

    pub fn beta_true(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.p];
        b[..4].copy_from_slice(&SIGNAL);
        b
    }

    /// The true marginal `τ`-quantile; 0 at the median by symmetry.
    pub fn q0(&self) -> f64 {
        0.0
    }

    /// `P(δ = 1 | X = x)`.
    pub fn selection_probability(&self, x: &[f64]) -> f64 {
        let z = match self.kind {
            DgpKind::Dgp1 => dagger_transform(x),
            DgpKind::Dgp2 => x.to_vec(),
        };
        expit(1.0 - SIGNAL.iter().zip(&z).map(|(s, v)| s * v).sum::<f64>())
    }
}

/// `x†ⱼ = xⱼ − xⱼ² + 2xⱼ³` for the first four coordinates, identity after.
pub fn dagger_transform(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, &v)| if j < 4 { v - v * v + 2.0 * v * v * v } else { v })
        .collect()
}

pub fn gen_covariates<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Matrix {
    let unif = Uniform::new(-TRUNCATION, TRUNCATION).expect("valid bounds");
    let norm = Normal::new(0.0, 0.5f64.sqrt()).expect("valid scale");
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        let row = x.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j < 2 {
                unif.sample(rng)
            } else {
                loop {
                    let z: f64 = norm.sample(rng);
                    if z.abs() <= TRUNCATION {
                        break z;
                    }
                }
            };
        }
    }
    x
}

pub fn gen_outcome_and_missing<R: Rng + ?Sized>(x: &[f64], spec: &DgpSpec, rng: &mut R) -> (f64, bool) {
    let mean: f64 = SIGNAL.iter().zip(x).map(|(s, v)| s * v).sum();
    let e: f64 = rng.sample(rand_distr::StandardNormal);
    let pi = spec.selection_probability(x);
    (mean + e, rng.random::<f64>() < pi)
}

/// Random stream for replication `rep`: stream `rep` of the ChaCha8
/// generator keyed by `seed`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draws replication `rep`. Responses of unselected units are set to NaN.
pub fn generate(spec: &DgpSpec, seed: u64, rep: u64) -> Result<Dataset> {
    let mut rng = rep_rng(seed, rep);
    let x = gen_covariates(spec.n, spec.p, &mut rng);
    let mut y = Vec::with_capacity(spec.n);
    let mut delta = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let (yi, di) = gen_outcome_and_missing(x.row(i), spec, &mut rng);
        y.push(if di { yi } else { f64::NAN });
        delta.push(di);
    }
    Dataset::new(x, y, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Proposed,
    Aipw,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Proposed => "proposed",
            EstimatorKind::Aipw => "aipw",
        }
    }
}

/// One replication's estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub q_hat: f64,
    /// `σ̂`, so that `σ̂/√n` is the standard error.
    pub sigma_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub c_used: Option<f64>,
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub q_hat: f64,
    pub sigma_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub covered: bool,
    pub c_used: Option<f64>,
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimator: String,
    pub bias: f64,
    /// Divisor `R − 1`; zero when only one replication succeeded.
    pub sd: f64,
    /// `√(mean (q̂ − q₀)²)`.
    pub rmse: f64,
    pub cp: f64,
    /// `mean σ̂/√n`.
    pub esd: f64,
    pub n_reps: usize,
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
}

/// Aggregates successful replications against the truth `q0`.
pub fn summarize(label: &str, q0: f64, n: usize, records: Vec<RepRecord>, failures: Vec<RepFailure>) -> McReport {
    let r = records.len() as f64;
    let mean = records.iter().map(|x| x.q_hat).sum::<f64>() / r;
    let ss = records.iter().map(|x| (x.q_hat - mean).powi(2)).sum::<f64>();
    let sd = if records.len() > 1 {
        (ss / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    let mse = records.iter().map(|x| (x.q_hat - q0).powi(2)).sum::<f64>() / r;
    let cp = records.iter().filter(|x| x.covered).count() as f64 / r;
    let esd = records.iter().map(|x| x.sigma_hat / (n as f64).sqrt()).sum::<f64>() / r;
    McReport {
        estimator: label.to_string(),
        bias: mean - q0,
        sd,
        rmse: mse.sqrt(),
        cp,
        esd,
        n_reps: records.len() + failures.len(),
        records,
        failures,
    }
}

/// Runs `estimators` on `n_reps` seeded replications and returns one report
/// per estimator. More than `max_failure_rate` failed replications for any
/// estimator aborts the study.
pub fn run_replications<F>(
    spec: &DgpSpec,
    n_reps: usize,
    seed: u64,
    labels: &[&str],
    max_failure_rate: f64,
    estimators: F,
) -> Result<Vec<McReport>>
where
    F: Fn(usize, &Dataset) -> Vec<Result<RepOutcome>> + Sync,
{
    if n_reps == 0 {
        return Err(Error::InvalidInput("n_reps must be at least 1".into()));
    }
    let per_rep: Vec<Vec<Result<RepOutcome>>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| match generate(spec, seed, rep as u64) {
            Ok(data) => estimators(rep, &data),
            Err(e) => labels.iter().map(|_| Err(Error::InvalidInput(e.to_string()))).collect(),
        })
        .collect();

    let q0 = spec.q0();
    let mut reports = Vec::with_capacity(labels.len());
    for (k, label) in labels.iter().enumerate() {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (rep, outs) in per_rep.iter().enumerate() {
            match &outs[k] {
                Ok(o) => records.push(RepRecord {
                    rep,
                    q_hat: o.q_hat,
                    sigma_hat: o.sigma_hat,
                    ci_lower: o.ci_lower,
                    ci_upper: o.ci_upper,
                    covered: o.ci_lower <= q0 && q0 <= o.ci_upper,
                    c_used: o.c_used,
                    zeta: o.zeta,
                }),
                Err(e) => {
                    log::warn!("replication {rep} failed for {label}: {e}");
                    failures.push(RepFailure {
                        rep,
                        error: e.to_string(),
                    });
                }
            }
        }
        if records.is_empty() || failures.len() as f64 > max_failure_rate * n_reps as f64 {
            return Err(Error::TooManyFailures {
                failed: failures.len(),
                total: n_reps,
            });
        }
        reports.push(summarize(label, q0, spec.n, records, failures));
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub n_reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub estimator: EstimatorConfig,
    pub aipw: AipwConfig,
    /// Center covariates at sample means before fitting. The design's
    /// population means are already zero.
    pub center_covariates: bool,
    pub max_failure_rate: f64,
}

impl StudyConfig {
    pub fn new(spec: DgpSpec, n_reps: usize, seed: u64) -> Self {
        Self {
            spec,
            n_reps,
            seed,
            estimators: vec![EstimatorKind::Proposed, EstimatorKind::Aipw],
            estimator: EstimatorConfig::default(),
            aipw: AipwConfig::default(),
            center_covariates: false,
            max_failure_rate: 0.05,
        }
    }
}

/// Seed for the cross-validation folds of replication `rep`.
fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep as u64)
}

/// Monte Carlo study of the configured estimators under the normal model.
/// Both estimators share one outcome-model fit per replication.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<McReport>> {
    if cfg.estimators.is_empty() {
        return Err(Error::InvalidInput("no estimators requested".into()));
    }
    let model = NormalLinearModel::default();
    let labels: Vec<&str> = cfg.estimators.iter().map(|k| k.label()).collect();
    run_replications(
        &cfg.spec,
        cfg.n_reps,
        cfg.seed,
        &labels,
        cfg.max_failure_rate,
        |rep, data| {
            let data = if cfg.center_covariates {
                data.clone().centered()
            } else {
                data.clone()
            };
            let mut est_cfg = cfg.estimator.clone();
            est_cfg.seed = rep_seed(cfg.seed, rep);
            let fit = fit_lasso_cv(
                &data,
                &model,
                est_cfg.lambda_grid.as_deref(),
                est_cfg.cv_folds,
                est_cfg.seed,
                &est_cfg.lasso,
            )
            .map_err(|e| e.at(Stage::Lasso));
            cfg.estimators
                .iter()
                .map(|kind| {
                    let fit = fit.as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
                    run_one(*kind, &data, &model, fit, &est_cfg, &cfg.aipw)
                })
                .collect()
        },
    )
}

fn run_one(
    kind: EstimatorKind,
    data: &Dataset,
    model: &dyn ConditionalModel,
    fit: &crate::lasso::LassoFit,
    est_cfg: &EstimatorConfig,
    aipw_cfg: &AipwConfig,
) -> Result<RepOutcome> {
    match kind {
        EstimatorKind::Proposed => {
            let e = estimate_from_fit(data, model, fit, est_cfg)?;
            Ok(RepOutcome {
                q_hat: e.q_hat,
                sigma_hat: e.sigma2_hat.sqrt(),
                ci_lower: e.ci_lower,
                ci_upper: e.ci_upper,
                c_used: e.weights.c_used,
                zeta: Some(e.weights.zeta),
            })
        }
        EstimatorKind::Aipw => {
            let mut a = aipw_cfg.clone();
            a.base.seed = est_cfg.seed;
            let e = estimate_aipw_from_fit(data, model, fit, &a)?;
            Ok(RepOutcome {
                q_hat: e.q_hat,
                sigma_hat: e.sigma2_hat.sqrt(),
                ci_lower: e.ci_lower,
                ci_upper: e.ci_upper,
                c_used: None,
                zeta: None,
            })
        }
    }
}
