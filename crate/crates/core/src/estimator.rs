//! Pilot quantile, weighted estimating-equation solve, variance estimate and
//! confidence intervals.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::lasso::{fit_lasso_cv, LassoFit, LassoOptions};
use crate::model::ConditionalModel;
use crate::normal;
use crate::weights::{compute_weights, WeightConfig, WeightSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub tau_level: f64,
    pub alpha: f64,
    /// Seeds the cross-validation folds.
    pub seed: u64,
    pub cv_folds: usize,
    /// Explicit λ grid; defaults to 50 log-spaced values below λ_max.
    pub lambda_grid: Option<Vec<f64>>,
    /// Fit on `(Y − mean)/sd` of observed responses and map results back.
    pub standardize_response: bool,
    pub lasso: LassoOptions,
    pub weights: WeightConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            tau_level: 0.5,
            alpha: 0.05,
            seed: 0,
            cv_folds: 10,
            lambda_grid: None,
            standardize_response: false,
            lasso: LassoOptions::default(),
            weights: WeightConfig::default(),
        }
    }
}

impl EstimatorConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tau_level > 0.0 && self.tau_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tau must lie in (0, 1), got {}",
                self.tau_level
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.weights.c0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "c0 must be positive, got {}",
                self.weights.c0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub q_hat: f64,
    pub q_pilot: f64,
    pub tau_level: f64,
    pub sigma2_hat: f64,
    pub t_hat: f64,
    pub v1_hat: f64,
    pub v2_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    /// `|F̂ₙ(q̂) − τ|`.
    pub eq_residual: f64,
    pub n: usize,
    pub n_observed: usize,
    pub lambda: f64,
    /// Number of nonzero outcome-model coefficients.
    pub support_size: usize,
    pub weights: WeightSolution,
}

impl QuantileEstimate {
    /// `σ̂/√n`.
    pub fn std_error(&self) -> f64 {
        (self.sigma2_hat / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    /// `q̂₁ − q̂₀`.
    pub m_hat: f64,
    pub group0: QuantileEstimate,
    pub group1: QuantileEstimate,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub t: f64,
    pub v1: f64,
    pub v2: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {tau}")))
    }
}

const MAX_DOUBLINGS: usize = 60;

/// Root of `q ↦ n⁻¹ Σ h(q, Xᵢᵀβ) − τ` by bracketed bisection.
pub fn pilot_quantile(data: &Dataset, model: &dyn ConditionalModel, beta: &[f64], tau_level: f64) -> Result<f64> {
    check_tau(tau_level)?;
    let u = data.indices(beta);
    let n = u.len() as f64;
    let map = |q: f64| u.iter().map(|&ui| model.cdf(q, ui)).sum::<f64>() / n - tau_level;

    let (y_lo, y_hi) = observed_range(data);
    let (mut lo, mut hi) = (y_lo - 1.0, y_hi + 1.0);
    let mut width = 1.0;
    let mut k = 0;
    while map(lo) > 0.0 {
        k += 1;
        if k > MAX_DOUBLINGS {
            return Err(Error::Bracket(MAX_DOUBLINGS));
        }
        width *= 2.0;
        lo = y_lo - width;
    }
    width = 1.0;
    k = 0;
    while map(hi) < 0.0 {
        k += 1;
        if k > MAX_DOUBLINGS {
            return Err(Error::Bracket(MAX_DOUBLINGS));
        }
        width *= 2.0;
        hi = y_hi + width;
    }
    Ok(bisect(map, lo, hi).0)
}

fn observed_range(data: &Dataset) -> (f64, f64) {
    data.observed_y()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)))
}

/// Bisection on an increasing-through-zero bracket `f(lo) ≤ 0 ≤ f(hi)`,
/// run until the bracket stops shrinking. Returns the root and `|f|` there.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let lo_neg = f(lo) <= 0.0;
    let mut best = (lo, f(lo).abs());
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v.abs() < best.1 || (v.abs() == best.1 && mid < best.0) {
            best = (mid, v.abs());
        }
        if v == 0.0 {
            break;
        }
        if (v < 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let fh = f(hi).abs();
    if fh < best.1 {
        best = (hi, fh);
    }
    best
}

/// Minimizer of the weighted estimating-equation gap and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveResult {
    pub q: f64,
    pub residual: f64,
}

const TIE_TOL: f64 = 1e-12;
const INTERVAL_SAMPLES: usize = 8;
const TAIL_SAMPLES: usize = 64;

/// Smallest global minimizer of
/// `G(q) = |n⁻¹ Σ h(q, uᵢ) + Σ_{δ=1} wᵢ (I[Yᵢ ≤ q] − h(q, uᵢ)) − τ|`.
///
/// `weights` are over observed units in dataset order.
pub fn adjusted_solve(
    data: &Dataset,
    model: &dyn ConditionalModel,
    beta: &[f64],
    weights: &[f64],
    tau_level: f64,
) -> Result<SolveResult> {
    check_tau(tau_level)?;
    if weights.len() != data.n_observed() {
        return Err(Error::InvalidInput(format!(
            "expected {} weights, got {}",
            data.n_observed(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("adjusted_solve weights"));
    }
    let u = data.indices(beta);
    let n = data.n() as f64;
    let mut coef = vec![1.0 / n; data.n()];
    let mut jumps: Vec<(f64, f64)> = Vec::with_capacity(weights.len());
    for (k, i) in data.observed_indices().into_iter().enumerate() {
        coef[i] -= weights[k];
        jumps.push((data.y()[i], weights[k]));
    }
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Distinct breakpoints with their cumulative step value.
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(jumps.len());
    let mut acc = 0.0;
    for (y, w) in jumps {
        acc += w;
        match knots.last_mut() {
            Some(last) if last.0 == y => last.1 = acc,
            _ => knots.push((y, acc)),
        }
    }
    let smooth = |q: f64| -> f64 {
        u.iter()
            .zip(&coef)
            .map(|(&ui, &c)| if c == 0.0 { 0.0 } else { c * model.cdf(q, ui) })
            .sum()
    };
    let smooth_mass = |q: f64, upper: bool| -> f64 {
        u.iter()
            .map(|&ui| {
                let h = model.cdf(q, ui);
                if upper {
                    1.0 - h
                } else {
                    h
                }
            })
            .sum()
    };

    let first = knots[0].0;
    let last = knots[knots.len() - 1].0;
    let mut left = first - 1.0;
    let mut width = 1.0;
    let mut k = 0;
    while smooth_mass(left, false) > 1e-16 {
        k += 1;
        if k > MAX_DOUBLINGS {
            return Err(Error::Bracket(MAX_DOUBLINGS));
        }
        width *= 2.0;
        left = first - width;
    }
    let mut right = last + 1.0;
    width = 1.0;
    k = 0;
    while smooth_mass(right, true) > 1e-16 {
        k += 1;
        if k > MAX_DOUBLINGS {
            return Err(Error::Bracket(MAX_DOUBLINGS));
        }
        width *= 2.0;
        right = last + width;
    }

    let mut best: Option<SolveResult> = None;
    let mut offer = |q: f64, g: f64| -> bool {
        match best {
            Some(b) if g >= b.residual - TIE_TOL => {}
            _ => best = Some(SolveResult { q, residual: g }),
        }
        best.is_some_and(|b| b.residual <= TIE_TOL)
    };

    // Left tail [left, first): step value 0.
    let phi0 = |q: f64| smooth(q) - tau_level;
    if let Some((q, g)) = search_interval(&phi0, left, first.next_down(), TAIL_SAMPLES) {
        if offer(q, g) {
            return Ok(best.unwrap());
        }
    }
    for (idx, &(y, step)) in knots.iter().enumerate() {
        let phi = |q: f64| smooth(q) + step - tau_level;
        if offer(y, phi(y).abs()) {
            return Ok(best.unwrap());
        }
        let (end, samples) = match knots.get(idx + 1) {
            Some(&(next, _)) => (next.next_down(), INTERVAL_SAMPLES),
            None => (right.max(y.next_up()), TAIL_SAMPLES),
        };
        let start = y.next_up();
        if start <= end {
            if let Some((q, g)) = search_interval(&phi, start, end, samples) {
                if offer(q, g) {
                    return Ok(best.unwrap());
                }
            }
        }
    }
    best.ok_or(Error::NoObserved)
}

/// Smallest minimizer of `|φ|` over `[a, b]`: the leftmost sampled sign
/// change is refined by bisection, otherwise the best sample is refined by
/// golden-section search.
fn search_interval(phi: &impl Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> Option<(f64, f64)> {
    if !(a <= b) {
        return None;
    }
    let m = samples.max(2);
    let pts: Vec<f64> = (0..=m)
        .map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 })
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&q| phi(q)).collect();
    let mut best_j = 0;
    for j in 0..=m {
        if vals[j] == 0.0 {
            return Some((pts[j], 0.0));
        }
        if j > 0 && (vals[j - 1] < 0.0) != (vals[j] < 0.0) {
            let (lo, hi) = (pts[j - 1], pts[j]);
            let f = |q: f64| if vals[j - 1] < 0.0 { phi(q) } else { -phi(q) };
            return Some(bisect(f, lo, hi));
        }
        if vals[j].abs() < vals[best_j].abs() {
            best_j = j;
        }
    }
    let lo = pts[best_j.saturating_sub(1)];
    let hi = pts[(best_j + 1).min(m)];
    let (q, g) = golden(|q| phi(q).abs(), lo, hi);
    if g < vals[best_j].abs() {
        Some((q, g))
    } else {
        Some((pts[best_j], vals[best_j].abs()))
    }
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if !(b - a > 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1e-300)) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `σ̂² = (V̂₁ + V̂₂)/T̂²` with `T̂ = n⁻¹ Σ f(q̃, uᵢ)`,
/// `V̂₁ = n Σ_{δ=1} ŵᵢ² h(1−h)` and `V̂₂` the sample variance of `h(q̃, uᵢ)`.
pub fn variance_estimate(
    data: &Dataset,
    model: &dyn ConditionalModel,
    beta: &[f64],
    q_pilot: f64,
    weights: &[f64],
) -> Result<VarianceEstimate> {
    if weights.len() != data.n_observed() {
        return Err(Error::InvalidInput(format!(
            "expected {} weights, got {}",
            data.n_observed(),
            weights.len()
        )));
    }
    let u = data.indices(beta);
    let n = data.n() as f64;
    let t = u.iter().map(|&ui| model.density(q_pilot, ui)).sum::<f64>() / n;
    if !(t > 1e-12) {
        return Err(Error::VanishingDensity(t));
    }
    let h: Vec<f64> = u.iter().map(|&ui| model.cdf(q_pilot, ui)).collect();
    let v1 = n * data
        .observed_indices()
        .into_iter()
        .zip(weights)
        .map(|(i, w)| w * w * h[i] * (1.0 - h[i]))
        .sum::<f64>();
    let mean_h = h.iter().sum::<f64>() / n;
    let mean_h2 = h.iter().map(|v| v * v).sum::<f64>() / n;
    let v2 = (mean_h2 - mean_h * mean_h).max(0.0);
    Ok(VarianceEstimate {
        sigma2: (v1 + v2) / (t * t),
        t,
        v1,
        v2,
    })
}

/// `q̂ ± z_{1−α/2} √(σ²/n)`.
pub fn confidence_interval(q_hat: f64, sigma2: f64, n: usize, alpha: f64) -> (f64, f64) {
    let half = normal::inverse_cdf(1.0 - alpha / 2.0) * (sigma2 / n as f64).sqrt();
    (q_hat - half, q_hat + half)
}

/// Interval for `q̂₁ − q̂₀` from independent groups.
pub fn contrast_interval(m_hat: f64, se1: f64, se0: f64, alpha: f64) -> (f64, f64) {
    let half = normal::inverse_cdf(1.0 - alpha / 2.0) * (se1 * se1 + se0 * se0).sqrt();
    (m_hat - half, m_hat + half)
}

fn count_nonzero(beta: &[f64]) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// Full pipeline: cross-validated lasso, pilot quantile, weights, weighted
/// solve, variance and interval.
pub fn estimate(data: &Dataset, model: &dyn ConditionalModel, cfg: &EstimatorConfig) -> Result<QuantileEstimate> {
    cfg.validate()?;
    if cfg.standardize_response {
        let (loc, scale) = response_moments(data);
        let inner = EstimatorConfig {
            standardize_response: false,
            ..cfg.clone()
        };
        let mut est = estimate(&data.with_transformed_response(loc, scale), model, &inner)?;
        est.q_hat = loc + scale * est.q_hat;
        est.q_pilot = loc + scale * est.q_pilot;
        est.ci_lower = loc + scale * est.ci_lower;
        est.ci_upper = loc + scale * est.ci_upper;
        est.sigma2_hat *= scale * scale;
        est.t_hat /= scale;
        return Ok(est);
    }

    let fit = fit_lasso_cv(
        data,
        model,
        cfg.lambda_grid.as_deref(),
        cfg.cv_folds,
        cfg.seed,
        &cfg.lasso,
    )
    .map_err(|e| e.at(Stage::Lasso))?;
    estimate_from_fit(data, model, &fit, cfg)
}

/// Pipeline from an existing outcome-model fit onward.
pub fn estimate_from_fit(
    data: &Dataset,
    model: &dyn ConditionalModel,
    fit: &LassoFit,
    cfg: &EstimatorConfig,
) -> Result<QuantileEstimate> {
    cfg.validate()?;
    let beta = &fit.beta;
    let q_pilot = pilot_quantile(data, model, beta, cfg.tau_level).map_err(|e| e.at(Stage::Pilot))?;
    let weights = compute_weights(data, model, beta, q_pilot, &cfg.weights).map_err(|e| e.at(Stage::Weights))?;
    let solved = adjusted_solve(data, model, beta, &weights.w, cfg.tau_level).map_err(|e| e.at(Stage::Solve))?;
    let var = variance_estimate(data, model, beta, q_pilot, &weights.w).map_err(|e| e.at(Stage::Variance))?;
    let (ci_lower, ci_upper) = confidence_interval(solved.q, var.sigma2, data.n(), cfg.alpha);
    Ok(QuantileEstimate {
        q_hat: solved.q,
        q_pilot,
        tau_level: cfg.tau_level,
        sigma2_hat: var.sigma2,
        t_hat: var.t,
        v1_hat: var.v1,
        v2_hat: var.v2,
        ci_lower,
        ci_upper,
        alpha: cfg.alpha,
        eq_residual: solved.residual,
        n: data.n(),
        n_observed: data.n_observed(),
        lambda: fit.lambda,
        support_size: count_nonzero(beta),
        weights,
    })
}

/// Mean and standard deviation of the observed responses; a zero spread
/// maps to one.
pub fn response_moments(data: &Dataset) -> (f64, f64) {
    let y = data.observed_y();
    let m = y.len() as f64;
    let mean = y.iter().sum::<f64>() / m;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// `m̂ = q̂₁ − q̂₀` with an interval from independent groups.
pub fn contrast(
    data0: &Dataset,
    data1: &Dataset,
    model: &dyn ConditionalModel,
    cfg: &EstimatorConfig,
) -> Result<ContrastEstimate> {
    let (g0, g1) = rayon::join(|| estimate(data0, model, cfg), || estimate(data1, model, cfg));
    let (group0, group1) = (g0?, g1?);
    let m_hat = group1.q_hat - group0.q_hat;
    let (ci_lower, ci_upper) = contrast_interval(m_hat, group1.std_error(), group0.std_error(), cfg.alpha);
    Ok(ContrastEstimate {
        m_hat,
        group0,
        group1,
        ci_lower,
        ci_upper,
        alpha: cfg.alpha,
    })
}
