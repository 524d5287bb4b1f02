//! ℓ1-penalized maximum likelihood by cyclic coordinate descent.
//!
//! Two fits share one engine: the complete-case fit of the outcome model,
//! `-Σ_{δᵢ=1} log f(Yᵢ, Xᵢᵀβ) + λ‖β‖₁`, and an ℓ1-penalized logistic fit of
//! `δ` on `X` with an unpenalized intercept. Non-quadratic losses are handled
//! by proximal Newton steps whose inner problems are weighted lasso problems
//! solved exactly by soft-thresholding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Max absolute coefficient change per sweep at convergence.
    pub tol: f64,
    /// Max change of any coordinate gradient per sweep at convergence.
    pub grad_tol: f64,
    pub max_sweeps: usize,
    /// Bound on |coefficient| for the logistic fit; exceeding it flags separation.
    pub coef_bound: f64,
    /// Penalize `λ sⱼ |βⱼ|` with `sⱼ` the standard deviation (divisor `m`)
    /// of column `j` over the fitted rows, which matches fitting on
    /// standardized covariates.
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            grad_tol: 1e-7,
            max_sweeps: 10_000,
            coef_bound: 20.0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    /// Zero for the complete-case outcome fit, which has no intercept.
    pub intercept: f64,
    pub lambda: f64,
    /// Penalized negative log-likelihood at the returned coefficients.
    pub objective: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Coefficients hit [`LassoOptions::coef_bound`] (logistic fit only).
    pub separation: bool,
    pub cv_curve: Option<Vec<(f64, f64)>>,
}

/// Outcome of a cross-validated λ search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    /// `(λ, mean held-out loss)` in grid order (descending λ).
    pub curve: Vec<(f64, f64)>,
    /// Folds that held out no usable unit.
    pub skipped_folds: Vec<usize>,
}

trait UnitLoss: Sync {
    fn value(&self, i: usize, u: f64) -> f64;
    fn grad(&self, i: usize, u: f64) -> f64;
    fn curvature(&self, i: usize, u: f64) -> f64;
}

struct ModelLoss<'a> {
    model: &'a dyn ConditionalModel,
    y: Vec<f64>,
}

impl UnitLoss for ModelLoss<'_> {
    fn value(&self, i: usize, u: f64) -> f64 {
        self.model.neg_log_density_raw(self.y[i], u)
    }
    fn grad(&self, i: usize, u: f64) -> f64 {
        self.model.nll_index_grad(self.y[i], u)
    }
    fn curvature(&self, i: usize, u: f64) -> f64 {
        self.model.nll_index_curvature(self.y[i], u)
    }
}

struct LogisticLoss {
    outcome: Vec<f64>,
}

#[inline]
pub(crate) fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl UnitLoss for LogisticLoss {
    fn value(&self, i: usize, u: f64) -> f64 {
        softplus(u) - self.outcome[i] * u
    }
    fn grad(&self, i: usize, u: f64) -> f64 {
        expit(u) - self.outcome[i]
    }
    fn curvature(&self, _i: usize, u: f64) -> f64 {
        let p = expit(u);
        p * (1.0 - p)
    }
}

/// Column-major copy of selected rows.
struct Design {
    m: usize,
    cols: Vec<Vec<f64>>,
    /// Per-coefficient penalty multipliers.
    pf: Vec<f64>,
}

impl Design {
    fn from_rows(data: &Dataset, rows: &[usize], standardize: bool) -> Self {
        let x = data.x();
        let cols: Vec<Vec<f64>> = (0..data.p())
            .map(|j| rows.iter().map(|&i| x.get(i, j)).collect())
            .collect();
        let pf = penalty_factors(&cols, standardize);
        Self {
            m: rows.len(),
            cols,
            pf,
        }
    }

    fn p(&self) -> usize {
        self.cols.len()
    }

    fn indices(&self, beta: &[f64], b0: f64) -> Vec<f64> {
        let mut u = vec![b0; self.m];
        for (col, &b) in self.cols.iter().zip(beta) {
            if b != 0.0 {
                for (ui, x) in u.iter_mut().zip(col) {
                    *ui += b * x;
                }
            }
        }
        u
    }
}

fn penalty_factors(cols: &[Vec<f64>], standardize: bool) -> Vec<f64> {
    cols.iter()
        .map(|col| {
            if !standardize || col.is_empty() {
                return 1.0;
            }
            let m = col.len() as f64;
            let mean = col.iter().sum::<f64>() / m;
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

fn column_factors(data: &Dataset, rows: &[usize], standardize: bool) -> Vec<f64> {
    let x = data.x();
    let cols: Vec<Vec<f64>> = (0..data.p())
        .map(|j| rows.iter().map(|&i| x.get(i, j)).collect())
        .collect();
    penalty_factors(&cols, standardize)
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn weighted_l1(beta: &[f64], pf: &[f64]) -> f64 {
    beta.iter().zip(pf).map(|(b, f)| f * b.abs()).sum()
}

struct Engine<'a> {
    design: &'a Design,
    loss: &'a dyn UnitLoss,
    lambda: f64,
    intercept: bool,
    clamp: Option<f64>,
    opts: LassoOptions,
}

struct RawFit {
    beta: Vec<f64>,
    b0: f64,
    objective: f64,
    sweeps: usize,
    converged: bool,
    clamped: bool,
}

impl Engine<'_> {
    fn objective(&self, u: &[f64], beta: &[f64]) -> f64 {
        let loss: f64 = u.iter().enumerate().map(|(i, &ui)| self.loss.value(i, ui)).sum();
        loss + self.lambda * weighted_l1(beta, &self.design.pf)
    }

    fn clamp(&self, v: f64, hit: &mut bool) -> f64 {
        match self.clamp {
            Some(b) if v.abs() > b => {
                *hit = true;
                v.signum() * b
            }
            _ => v,
        }
    }

    /// Cyclic coordinate descent on `½Σ hᵢ(rᵢ)² + λ‖β‖₁`, where `r` is the
    /// working residual; `beta`, `b0` and `r` are updated in place. Returns
    /// `(sweeps, converged)`.
    fn inner_cd(
        &self,
        h: &[f64],
        r: &mut [f64],
        beta: &mut [f64],
        b0: &mut f64,
        budget: usize,
        slack: f64,
    ) -> (usize, bool) {
        let d = self.design;
        let hx2: Vec<f64> = d
            .cols
            .iter()
            .map(|col| col.iter().zip(h).map(|(x, w)| w * x * x).sum())
            .collect();
        let hsum: f64 = h.iter().sum();
        let mut sweeps = 0;
        let mut full = true;

        while sweeps < budget {
            sweeps += 1;
            let mut max_change = 0.0f64;
            let mut max_grad_change = 0.0f64;
            let mut active_changed = false;

            for j in 0..d.p() {
                let old = beta[j];
                if !full && old == 0.0 {
                    continue;
                }
                let hj = hx2[j];
                if hj <= 0.0 {
                    continue;
                }
                let col = &d.cols[j];
                let g: f64 = col.iter().zip(h).zip(r.iter()).map(|((x, w), ri)| x * w * ri).sum();
                let new = soft_threshold(g + hj * old, self.lambda * d.pf[j]) / hj;
                let diff = new - old;
                if diff != 0.0 {
                    if (old == 0.0) != (new == 0.0) {
                        active_changed = true;
                    }
                    beta[j] = new;
                    for (ri, x) in r.iter_mut().zip(col) {
                        *ri -= diff * x;
                    }
                    max_change = max_change.max(diff.abs());
                    max_grad_change = max_grad_change.max(hj * diff.abs());
                }
            }
            if self.intercept && hsum > 0.0 {
                let diff = r.iter().zip(h).map(|(ri, w)| ri * w).sum::<f64>() / hsum;
                *b0 += diff;
                r.iter_mut().for_each(|ri| *ri -= diff);
                max_change = max_change.max(diff.abs());
                max_grad_change = max_grad_change.max(hsum * diff.abs());
            }

            let small = max_change <= slack * self.opts.tol && max_grad_change <= slack * self.opts.grad_tol;
            if small {
                if full && !active_changed {
                    return (sweeps, true);
                }
                full = true;
            } else {
                full = false;
            }
        }
        (sweeps, false)
    }

    fn run(&self, mut beta: Vec<f64>, mut b0: f64) -> RawFit {
        let m = self.design.m;
        let mut clamped = false;
        let mut u = self.design.indices(&beta, b0);
        let mut obj = self.objective(&u, &beta);
        let mut sweeps = 0;
        let mut converged = false;
        // Inner tolerance multiplier, tightened as outer steps shrink.
        let mut slack = if self.intercept { 1e4 } else { 1.0 };

        for _outer in 0..200 {
            let budget = self.opts.max_sweeps.saturating_sub(sweeps);
            if budget == 0 {
                break;
            }
            let mut h = vec![0.0; m];
            let mut r = vec![0.0; m];
            for i in 0..m {
                let c = self.loss.curvature(i, u[i]).max(1e-10);
                h[i] = c;
                r[i] = -self.loss.grad(i, u[i]) / c;
            }
            let mut cand = beta.clone();
            let mut cand_b0 = b0;
            let (s, inner_ok) = self.inner_cd(&h, &mut r, &mut cand, &mut cand_b0, budget, slack);
            sweeps += s;
            for v in cand.iter_mut() {
                *v = self.clamp(*v, &mut clamped);
            }
            if self.intercept {
                cand_b0 = self.clamp(cand_b0, &mut clamped);
            }

            let step = cand
                .iter()
                .zip(&beta)
                .map(|(a, b)| (a - b).abs())
                .fold((cand_b0 - b0).abs(), f64::max);
            if step <= self.opts.tol && inner_ok && slack == 1.0 {
                converged = true;
                break;
            }
            let loose = slack;
            slack = (0.01 * step / self.opts.tol).clamp(1.0, slack);

            // Backtracking on the true objective.
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = beta.iter().zip(&cand).map(|(b, c)| b + t * (c - b)).collect();
                let trial_b0 = b0 + t * (cand_b0 - b0);
                let tu = self.design.indices(&trial, trial_b0);
                let tobj = self.objective(&tu, &trial);
                if tobj <= obj + 1e-12 * obj.abs().max(1.0) {
                    beta = trial;
                    b0 = trial_b0;
                    u = tu;
                    obj = tobj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if loose > 1.0 {
                    slack = 1.0;
                    continue;
                }
                converged = inner_ok;
                break;
            }
            if !inner_ok {
                break;
            }
        }

        RawFit {
            beta,
            b0,
            objective: obj,
            sweeps,
            converged,
            clamped,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")))
    }
}

fn fit_model_rows(
    data: &Dataset,
    rows: &[usize],
    model: &dyn ConditionalModel,
    lambda: f64,
    warm: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_lambda(lambda)?;
    if rows.is_empty() {
        return Err(Error::NoObserved);
    }
    let design = Design::from_rows(data, rows, opts.standardize);
    let y = rows.iter().map(|&i| data.y()[i]).collect();
    let loss = ModelLoss { model, y };
    let engine = Engine {
        design: &design,
        loss: &loss,
        lambda,
        intercept: false,
        clamp: None,
        opts: *opts,
    };
    let init = warm.map_or_else(|| vec![0.0; data.p()], <[f64]>::to_vec);
    let raw = engine.run(init, 0.0);
    if !raw.converged {
        log::warn!("lasso did not converge in {} sweeps (lambda={lambda:.4e})", raw.sweeps);
    }
    Ok(LassoFit {
        beta: raw.beta,
        intercept: 0.0,
        lambda,
        objective: raw.objective,
        n_iter: raw.sweeps,
        converged: raw.converged,
        separation: false,
        cv_curve: None,
    })
}

/// Complete-case lasso fit of the outcome model at a fixed `lambda`.
pub fn fit_lasso(data: &Dataset, model: &dyn ConditionalModel, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    fit_model_rows(data, &data.observed_indices(), model, lambda, None, opts)
}

/// Complete-case penalized objective at arbitrary coefficients.
pub fn lasso_objective(
    data: &Dataset,
    model: &dyn ConditionalModel,
    beta: &[f64],
    lambda: f64,
    opts: &LassoOptions,
) -> f64 {
    let pf = column_factors(data, &data.observed_indices(), opts.standardize);
    let u = data.indices(beta);
    let loss: f64 = data
        .observed_indices()
        .into_iter()
        .map(|i| model.neg_log_density_raw(data.y()[i], u[i]))
        .sum();
    loss + lambda * weighted_l1(beta, &pf)
}

/// Smallest λ giving a zero complete-case fit.
pub fn lambda_max(data: &Dataset, model: &dyn ConditionalModel, opts: &LassoOptions) -> f64 {
    let rows = data.observed_indices();
    let pf = column_factors(data, &rows, opts.standardize);
    let g: Vec<f64> = rows.iter().map(|&i| model.nll_index_grad(data.y()[i], 0.0)).collect();
    (0..data.p())
        .map(|j| {
            rows.iter()
                .zip(&g)
                .map(|(&i, gi)| gi * data.x().get(i, j))
                .sum::<f64>()
                .abs()
                / pf[j]
        })
        .fold(0.0, f64::max)
}

/// `count` log-spaced values from `top` down to `ratio·top`.
pub fn log_grid(top: f64, ratio: f64, count: usize) -> Vec<f64> {
    let top = if top > 0.0 && top.is_finite() { top } else { 1.0 };
    if count <= 1 {
        return vec![top];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|k| top * (step * k as f64).exp()).collect()
}

/// Default CV grid for the outcome lasso: 50 values from λ_max to 1e-3·λ_max.
pub fn default_lambda_grid(data: &Dataset, model: &dyn ConditionalModel, opts: &LassoOptions) -> Vec<f64> {
    log_grid(lambda_max(data, model, opts), 1e-3, 50)
}

/// Deterministic fold labels for `n` units.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut label = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        label[i] = k % folds;
    }
    label
}

fn validate_grid(grid: &[f64], folds: usize) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted)
}

/// Picks the grid value with the smallest pooled held-out loss; ties go to
/// the larger λ.
fn pick(curve: &[(f64, f64)]) -> f64 {
    let mut best = curve[0];
    for &(l, loss) in &curve[1..] {
        if loss < best.1 {
            best = (l, loss);
        }
    }
    best.0
}

/// Sums per-fold `(loss_sum, count)` vectors into a mean-loss curve.
fn pool(grid: &[f64], per_fold: &[Option<Vec<(f64, usize)>>]) -> Vec<(f64, f64)> {
    grid.iter()
        .enumerate()
        .map(|(k, &l)| {
            let (s, c) = per_fold
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), f| (s + f[k].0, c + f[k].1));
            (l, if c > 0 { s / c as f64 } else { f64::INFINITY })
        })
        .collect()
}

/// K-fold cross-validation of the complete-case lasso over `grid`, scored by
/// held-out complete-case negative log-likelihood.
pub fn cross_validate_lambda(
    data: &Dataset,
    model: &dyn ConditionalModel,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvResult> {
    let grid = validate_grid(grid, folds)?;
    if grid.len() == 1 {
        return Ok(CvResult {
            lambda: grid[0],
            curve: vec![(grid[0], f64::NAN)],
            skipped_folds: vec![],
        });
    }
    let label = fold_assignment(data.n(), folds, seed);
    let obs = data.observed_indices();

    let per_fold: Vec<Option<Vec<(f64, usize)>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = obs.iter().copied().filter(|&i| label[i] != k).collect();
            let test: Vec<usize> = obs.iter().copied().filter(|&i| label[i] == k).collect();
            if train.is_empty() || test.is_empty() {
                return Ok(None);
            }
            let mut warm: Option<Vec<f64>> = None;
            let mut out = Vec::with_capacity(grid.len());
            for &l in &grid {
                let fit = fit_model_rows(data, &train, model, l, warm.as_deref(), opts)?;
                let loss: f64 = test
                    .iter()
                    .map(|&i| {
                        let u = crate::data::dot(data.x().row(i), &fit.beta);
                        model.neg_log_density_raw(data.y()[i], u)
                    })
                    .sum();
                out.push((loss, test.len()));
                warm = Some(fit.beta);
            }
            Ok(Some(out))
        })
        .collect::<Result<_>>()?;

    let skipped_folds: Vec<usize> = (0..folds).filter(|&k| per_fold[k].is_none()).collect();
    for k in &skipped_folds {
        log::warn!("cross-validation fold {k} has no usable observed units; skipped");
    }
    let curve = pool(&grid, &per_fold);
    Ok(CvResult {
        lambda: pick(&curve),
        curve,
        skipped_folds,
    })
}

/// Cross-validates λ then refits on all observed units.
pub fn fit_lasso_cv(
    data: &Dataset,
    model: &dyn ConditionalModel,
    grid: Option<&[f64]>,
    folds: usize,
    seed: u64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_lambda_grid(data, model, opts);
            &default
        }
    };
    let cv = cross_validate_lambda(data, model, grid, folds, seed, opts)?;
    let mut fit = fit_lasso(data, model, cv.lambda, opts)?;
    fit.cv_curve = Some(cv.curve);
    Ok(fit)
}

fn fit_logistic_rows(
    data: &Dataset,
    rows: &[usize],
    lambda: f64,
    warm: Option<(&[f64], f64)>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let design = Design::from_rows(data, rows, opts.standardize);
    let outcome: Vec<f64> = rows.iter().map(|&i| f64::from(u8::from(data.delta()[i]))).collect();
    let rate = outcome.iter().sum::<f64>() / outcome.len() as f64;
    let loss = LogisticLoss { outcome };
    let engine = Engine {
        design: &design,
        loss: &loss,
        lambda,
        intercept: true,
        clamp: Some(opts.coef_bound),
        opts: *opts,
    };
    let (init, b0) = match warm {
        Some((b, b0)) => (b.to_vec(), b0),
        None => {
            let r = rate.clamp(1e-9, 1.0 - 1e-9);
            (vec![0.0; data.p()], (r / (1.0 - r)).ln())
        }
    };
    let raw = engine.run(init, b0);
    let separation = raw.clamped || rate == 0.0 || rate == 1.0;
    if separation {
        log::warn!(
            "logistic fit shows separation; coefficients clamped at ±{}",
            opts.coef_bound
        );
    }
    Ok(LassoFit {
        beta: raw.beta,
        intercept: raw.b0,
        lambda,
        objective: raw.objective,
        n_iter: raw.sweeps,
        converged: raw.converged,
        separation,
        cv_curve: None,
    })
}

/// ℓ1-penalized logistic regression of `δ` on `X` over all units, with an
/// unpenalized intercept.
pub fn fit_logistic_lasso(data: &Dataset, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    let rows: Vec<usize> = (0..data.n()).collect();
    fit_logistic_rows(data, &rows, lambda, None, opts)
}

/// Fitted selection probabilities `expit(intercept + Xᵢᵀγ)`.
pub fn logistic_probabilities(data: &Dataset, fit: &LassoFit) -> Vec<f64> {
    data.indices(&fit.beta)
        .into_iter()
        .map(|u| expit(fit.intercept + u))
        .collect()
}

/// Smallest λ giving zero logistic slopes.
pub fn logistic_lambda_max(data: &Dataset, opts: &LassoOptions) -> f64 {
    let n = data.n();
    let rows: Vec<usize> = (0..n).collect();
    let pf = column_factors(data, &rows, opts.standardize);
    let rate = data.n_observed() as f64 / n as f64;
    (0..data.p())
        .map(|j| {
            (0..n)
                .map(|i| (f64::from(u8::from(data.delta()[i])) - rate) * data.x().get(i, j))
                .sum::<f64>()
                .abs()
                / pf[j]
        })
        .fold(0.0, f64::max)
}

/// K-fold cross-validation of the logistic lasso scored by held-out deviance.
pub fn cross_validate_logistic(
    data: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvResult> {
    let grid = validate_grid(grid, folds)?;
    if grid.len() == 1 {
        return Ok(CvResult {
            lambda: grid[0],
            curve: vec![(grid[0], f64::NAN)],
            skipped_folds: vec![],
        });
    }
    let label = fold_assignment(data.n(), folds, seed);
    let per_fold: Vec<Option<Vec<(f64, usize)>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| label[i] != k).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| label[i] == k).collect();
            if train.is_empty() || test.is_empty() {
                return Ok(None);
            }
            let mut warm: Option<(Vec<f64>, f64)> = None;
            let mut out = Vec::with_capacity(grid.len());
            for &l in &grid {
                let fit = fit_logistic_rows(data, &train, l, warm.as_ref().map(|(b, b0)| (b.as_slice(), *b0)), opts)?;
                let dev: f64 = test
                    .iter()
                    .map(|&i| {
                        let t = fit.intercept + crate::data::dot(data.x().row(i), &fit.beta);
                        let d = f64::from(u8::from(data.delta()[i]));
                        2.0 * (softplus(t) - d * t)
                    })
                    .sum();
                out.push((dev, test.len()));
                warm = Some((fit.beta, fit.intercept));
            }
            Ok(Some(out))
        })
        .collect::<Result<_>>()?;
    let skipped_folds: Vec<usize> = (0..folds).filter(|&k| per_fold[k].is_none()).collect();
    let curve = pool(&grid, &per_fold);
    Ok(CvResult {
        lambda: pick(&curve),
        curve,
        skipped_folds,
    })
}

/// Cross-validated logistic lasso refit on all units.
pub fn fit_logistic_lasso_cv(data: &Dataset, folds: usize, seed: u64, opts: &LassoOptions) -> Result<LassoFit> {
    let grid = log_grid(logistic_lambda_max(data, opts), 1e-3, 50);
    let cv = cross_validate_logistic(data, &grid, folds, seed, opts)?;
    let mut fit = fit_logistic_lasso(data, cv.lambda, opts)?;
    fit.cv_curve = Some(cv.curve);
    Ok(fit)
}
