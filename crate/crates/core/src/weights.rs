//! Debiasing weights.
//!
//! Over observed units the weights minimize `Σ wᵢ² τᵢ` subject to
//! `‖a − Σ wᵢ bᵢ‖∞ ≤ Δ` and `Σ wᵢ = 1`, where
//! `τᵢ = h(q̃, uᵢ)(1 − h(q̃, uᵢ))`, `bᵢ = ḣ_u(q̃, uᵢ) Xᵢ` and
//! `a = n⁻¹ Σ_all ḣ_u(q̃, uᵢ) Xᵢ`.
//!
//! The constrained program is reached through the family
//! `min (1−ζ) Σ wᵢ² τᵢ + ζ Γ²` s.t. `|aⱼ − Σ wᵢ bᵢⱼ| ≤ Γ`, `Σ w = 1`,
//! indexed by `ζ ∈ [0, 1)`. `ζ` is chosen by maximizing the Lagrangian
//! criterion `Σ ŵᵢ(ζ)² τᵢ + ζ/(1−ζ) (‖a − Bᵀŵ(ζ)‖∞² − Δ²)` over the grid
//! `{0, 0.01, …, 0.99}`; the grid maximizer is then refined to the exact
//! maximizer, which the multipliers of the hard-constrained program give in
//! closed form. An ℓ1-penalized dual in `p + 1` coordinates gives the same
//! weights through `ŵᵢ = Âᵢᵀη̂ / (2n τᵢ)` and serves as a cross-check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::qp::{self, ConstraintSet, QpFailure, QpOptions};

/// Pilot `h` values outside `(ε, 1 − ε)` are treated as degenerate.
pub const DEFAULT_TAU_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceProblem {
    tau: Vec<f64>,
    /// `n₁ × p`, one row per observed unit.
    b: Matrix,
    /// Transpose of `b`, one row per balance coordinate.
    #[serde(skip)]
    bt: Option<Matrix>,
    a: Vec<f64>,
    delta_cap: f64,
    n: usize,
    degenerate: Vec<usize>,
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.ncols(), m.nrows());
    for i in 0..m.nrows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            t.set(j, i, v);
        }
    }
    t
}

impl BalanceProblem {
    pub fn new(tau: Vec<f64>, b: Matrix, a: Vec<f64>, delta_cap: f64, n: usize) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::NoObserved);
        }
        if b.nrows() != tau.len() || b.ncols() != a.len() {
            return Err(Error::InvalidInput(format!(
                "balance dimensions disagree: tau {}, b {}x{}, a {}",
                tau.len(),
                b.nrows(),
                b.ncols(),
                a.len()
            )));
        }
        if let Some(t) = tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {t}")));
        }
        if !(delta_cap.is_finite() && delta_cap >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta must be non-negative, got {delta_cap}"
            )));
        }
        if n < tau.len() {
            return Err(Error::InvalidInput(
                "n is smaller than the number of observed units".into(),
            ));
        }
        let bt = Some(transpose(&b));
        Ok(Self {
            tau,
            b,
            bt,
            a,
            delta_cap,
            n,
            degenerate: Vec::new(),
        })
    }

    /// Builds the program from pilot estimates `(q̃, β̂)`.
    pub fn from_pilot(
        data: &Dataset,
        model: &dyn ConditionalModel,
        beta: &[f64],
        q_pilot: f64,
        delta_cap: f64,
        tau_floor: f64,
    ) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        let u = data.indices(beta);
        let mut a = vec![0.0; p];
        let mut tau = Vec::with_capacity(data.n_observed());
        let mut rows = Vec::with_capacity(data.n_observed() * p);
        let mut degenerate = Vec::new();
        for i in 0..n {
            let hd = model.cdf_index_deriv(q_pilot, u[i]);
            let x = data.x().row(i);
            for (aj, xj) in a.iter_mut().zip(x) {
                *aj += hd * xj;
            }
            if data.delta()[i] {
                let h = model.cdf(q_pilot, u[i]);
                if h <= tau_floor || h >= 1.0 - tau_floor {
                    degenerate.push(tau.len());
                    tau.push(tau_floor * (1.0 - tau_floor));
                } else {
                    tau.push(h * (1.0 - h));
                }
                rows.extend(x.iter().map(|xj| hd * xj));
            }
        }
        a.iter_mut().for_each(|v| *v /= n as f64);
        if !degenerate.is_empty() {
            log::warn!(
                "{} observed units have degenerate pilot probabilities; tau clamped",
                degenerate.len()
            );
        }
        let b = Matrix::from_vec(tau.len(), p, rows)?;
        let mut prob = Self::new(tau, b, a, delta_cap, n)?;
        prob.degenerate = degenerate;
        Ok(prob)
    }

    pub fn with_delta_cap(&self, delta_cap: f64) -> Self {
        Self {
            delta_cap,
            ..self.clone()
        }
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn delta_cap(&self) -> f64 {
        self.delta_cap
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n1(&self) -> usize {
        self.tau.len()
    }
    pub fn p(&self) -> usize {
        self.a.len()
    }
    /// Observed-unit positions whose `τ` was clamped.
    pub fn degenerate_units(&self) -> &[usize] {
        &self.degenerate
    }

    fn bt(&self) -> std::borrow::Cow<'_, Matrix> {
        match &self.bt {
            Some(t) => std::borrow::Cow::Borrowed(t),
            None => std::borrow::Cow::Owned(transpose(&self.b)),
        }
    }

    /// `a − Bᵀw`.
    pub fn balance_residual(&self, w: &[f64]) -> Vec<f64> {
        let mut r = self.a.clone();
        for (i, &wi) in w.iter().enumerate() {
            for (rj, bj) in r.iter_mut().zip(self.b.row(i)) {
                *rj -= wi * bj;
            }
        }
        r
    }

    /// `‖a − Bᵀw‖∞`.
    pub fn imbalance(&self, w: &[f64]) -> f64 {
        self.balance_residual(w).iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `Σ wᵢ² τᵢ`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.tau).map(|(wi, t)| wi * wi * t).sum()
    }

    /// `wᵢ ∝ 1/τᵢ`, the minimizer when the balance constraint is inactive.
    pub fn inverse_tau_weights(&self) -> Vec<f64> {
        let s: f64 = self.tau.iter().map(|t| 1.0 / t).sum();
        self.tau.iter().map(|t| 1.0 / t / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    /// Weights over observed units, in dataset order.
    pub w: Vec<f64>,
    pub zeta: f64,
    /// Grid maximizer of the ζ criterion, when the grid search ran.
    pub zeta_grid: Option<f64>,
    pub gamma: f64,
    /// `Σ wᵢ² τᵢ`.
    pub objective: f64,
    /// Achieved `‖a − Bᵀw‖∞`.
    pub constraint_residual: f64,
    pub delta_cap: f64,
    /// Final Δ constant after feasibility escalation.
    pub c_used: Option<f64>,
    pub eta: Option<Vec<f64>>,
    /// `(ζ, criterion)` over the grid points that solved.
    pub criterion_curve: Vec<(f64, f64)>,
    pub failed_zetas: Vec<f64>,
    pub degenerate_units: Vec<usize>,
    pub iterations: usize,
}

impl WeightSolution {
    fn from_weights(prob: &BalanceProblem, w: Vec<f64>, zeta: f64, gamma: f64, iterations: usize) -> Self {
        Self {
            objective: prob.objective(&w),
            constraint_residual: prob.imbalance(&w),
            w,
            zeta,
            zeta_grid: None,
            gamma,
            delta_cap: prob.delta_cap,
            c_used: None,
            eta: None,
            criterion_curve: Vec::new(),
            failed_zetas: Vec::new(),
            degenerate_units: prob.degenerate.clone(),
            iterations,
        }
    }
}

/// `Δ = c · n^{−5/16} · (log p)^{1/8}`.
pub fn delta_schedule(n: usize, p: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("delta schedule needs n >= 2, got {n}")));
    }
    if p < 2 {
        return Err(Error::InvalidInput(format!("delta schedule needs p >= 2, got {p}")));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidInput(format!("delta constant must be positive, got {c}")));
    }
    Ok(c * (n as f64).powf(-5.0 / 16.0) * (p as f64).ln().powf(0.125))
}

/// The printed grid `{0, 0.01, …, 0.99}`.
pub fn default_zeta_grid() -> Vec<f64> {
    (0..100).map(|k| k as f64 / 100.0).collect()
}

/// Constraint rows of the balance programs. Index 0 is `Σw = 1`; index
/// `1 + 2j` bounds `aⱼ − Bⱼᵀw` from above and `2 + 2j` from below.
struct BalanceCons<'a> {
    prob: &'a BalanceProblem,
    bt: &'a Matrix,
    /// Carries the extra `Γ` variable (ζ form) instead of a fixed cap.
    with_gamma: bool,
    cap: f64,
}

impl ConstraintSet for BalanceCons<'_> {
    fn dim(&self) -> usize {
        self.prob.n1() + usize::from(self.with_gamma)
    }
    fn len(&self) -> usize {
        1 + 2 * self.prob.p()
    }
    fn n_eq(&self) -> usize {
        1
    }
    fn rhs(&self, c: usize) -> f64 {
        if c == 0 {
            return 1.0;
        }
        let j = (c - 1) / 2;
        let a = self.prob.a[j];
        if (c - 1).is_multiple_of(2) {
            a - self.cap
        } else {
            -a - self.cap
        }
    }
    fn dot(&self, c: usize, x: &[f64]) -> f64 {
        let n1 = self.prob.n1();
        if c == 0 {
            return x[..n1].iter().sum();
        }
        let j = (c - 1) / 2;
        let s = dot(self.bt.row(j), &x[..n1]);
        let g = if self.with_gamma { x[n1] } else { 0.0 };
        if (c - 1).is_multiple_of(2) {
            s + g
        } else {
            -s + g
        }
    }
    fn axpy(&self, c: usize, alpha: f64, out: &mut [f64]) {
        let n1 = self.prob.n1();
        if c == 0 {
            out[..n1].iter_mut().for_each(|o| *o += alpha);
            return;
        }
        let j = (c - 1) / 2;
        let sign = if (c - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
        for (o, b) in out[..n1].iter_mut().zip(self.bt.row(j)) {
            *o += sign * alpha * b;
        }
        if self.with_gamma {
            out[n1] += alpha;
        }
    }
    fn slacks(&self, x: &[f64], out: &mut [f64]) {
        let n1 = self.prob.n1();
        out[0] = x[..n1].iter().sum::<f64>() - 1.0;
        let g = if self.with_gamma { x[n1] } else { 0.0 };
        for j in 0..self.prob.p() {
            let s = dot(self.bt.row(j), &x[..n1]);
            let a = self.prob.a[j];
            out[1 + 2 * j] = s + g - (a - self.cap);
            out[2 + 2 * j] = -s + g - (-a - self.cap);
        }
    }
}

fn qp_error(f: QpFailure) -> Error {
    match f {
        QpFailure::Infeasible { violation } | QpFailure::NotConverged { violation, .. } => {
            let iterations = match f {
                QpFailure::NotConverged { iterations, .. } => iterations,
                QpFailure::Infeasible { .. } => 0,
            };
            Error::QpNotConverged { iterations, violation }
        }
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if (0.0..1.0).contains(&zeta) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("zeta must lie in [0, 1), got {zeta}")))
    }
}

/// Joint minimizer over `(w, Γ)` of `(1−ζ) Σ wᵢ² τᵢ + ζ Γ²` subject to
/// `|aⱼ − Σ wᵢ bᵢⱼ| ≤ Γ` and `Σ w = 1`.
pub fn solve_weights_primal(prob: &BalanceProblem, zeta: f64) -> Result<WeightSolution> {
    check_zeta(zeta)?;
    if zeta == 0.0 {
        let w = prob.inverse_tau_weights();
        let gamma = prob.imbalance(&w);
        return Ok(WeightSolution::from_weights(prob, w, 0.0, gamma, 0));
    }
    let bt = prob.bt();
    let cons = BalanceCons {
        prob,
        bt: &bt,
        with_gamma: true,
        cap: 0.0,
    };
    let mut g: Vec<f64> = prob.tau.iter().map(|t| 2.0 * (1.0 - zeta) * t).collect();
    g.push(2.0 * zeta);
    let sol = qp::solve(&g, None, &cons, &QpOptions::default()).map_err(qp_error)?;
    let n1 = prob.n1();
    let gamma = sol.x[n1];
    let w = sol.x[..n1].to_vec();
    Ok(WeightSolution::from_weights(prob, w, zeta, gamma, sol.iterations))
}

/// Solution of the hard-constrained program.
#[derive(Debug, Clone)]
pub struct HardSolution {
    pub w: Vec<f64>,
    /// Sum of the multipliers on the active balance constraints, i.e. the
    /// multiplier of the ∞-norm bound.
    pub multiplier: f64,
    pub n_active: usize,
    pub iterations: usize,
}

impl HardSolution {
    /// The `ζ` whose penalized program shares this solution.
    pub fn equivalent_zeta(&self, delta_cap: f64) -> f64 {
        if self.multiplier <= 0.0 || delta_cap <= 0.0 {
            return 0.0;
        }
        let lambda = self.multiplier / (2.0 * delta_cap);
        lambda / (1.0 + lambda)
    }
}

/// Minimizes `Σ wᵢ² τᵢ` subject to `‖a − Bᵀw‖∞ ≤ Δ` and `Σ w = 1`.
/// Returns `Ok(None)` when the constraints admit no point.
pub fn solve_weights_hard(prob: &BalanceProblem) -> Result<Option<HardSolution>> {
    let bt = prob.bt();
    let cons = BalanceCons {
        prob,
        bt: &bt,
        with_gamma: false,
        cap: prob.delta_cap,
    };
    let g: Vec<f64> = prob.tau.iter().map(|t| 2.0 * t).collect();
    match qp::solve(&g, None, &cons, &QpOptions::default()) {
        Ok(sol) => {
            let ineq: Vec<f64> = sol.active.iter().filter(|(c, _)| *c > 0).map(|(_, u)| *u).collect();
            Ok(Some(HardSolution {
                w: sol.x,
                multiplier: ineq.iter().sum(),
                n_active: ineq.len(),
                iterations: sol.iterations,
            }))
        }
        Err(QpFailure::Infeasible { .. }) => Ok(None),
        Err(f) => Err(qp_error(f)),
    }
}

/// Smallest achievable imbalance under `Σ w = 1`, by bisection on Δ with
/// the hard program as the feasibility test.
pub fn min_imbalance(prob: &BalanceProblem) -> Result<f64> {
    if solve_weights_hard(&prob.with_delta_cap(0.0))?.is_some() {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, prob.imbalance(&prob.inverse_tau_weights()));
    for _ in 0..60 {
        if hi - lo <= 1e-12 * hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if solve_weights_hard(&prob.with_delta_cap(mid))?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `Σ ŵᵢ² τᵢ + ζ/(1−ζ) (‖a − Bᵀŵ‖∞² − Δ²)`.
pub fn zeta_criterion(prob: &BalanceProblem, sol: &WeightSolution, zeta: f64) -> f64 {
    let d = prob.delta_cap;
    let r = sol.constraint_residual;
    sol.objective + zeta / (1.0 - zeta) * (r * r - d * d)
}

#[derive(Debug, Clone)]
pub struct ZetaSelection {
    pub zeta: f64,
    pub criterion: Vec<(f64, f64)>,
    pub solutions: Vec<(f64, WeightSolution)>,
    pub failed: Vec<f64>,
}

impl ZetaSelection {
    pub fn solution(&self, zeta: f64) -> Option<&WeightSolution> {
        self.solutions.iter().find(|(z, _)| *z == zeta).map(|(_, s)| s)
    }
}

/// Solves the ζ program at every grid point and returns the criterion
/// maximizer; ties go to the smaller ζ. Failed grid points are skipped.
pub fn select_zeta(prob: &BalanceProblem, grid: &[f64]) -> Result<ZetaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("zeta grid is empty".into()));
    }
    for &z in grid {
        check_zeta(z)?;
    }
    let results: Vec<(f64, Result<WeightSolution>)> =
        grid.par_iter().map(|&z| (z, solve_weights_primal(prob, z))).collect();

    let mut criterion = Vec::with_capacity(grid.len());
    let mut solutions = Vec::with_capacity(grid.len());
    let mut failed = Vec::new();
    for (z, r) in results {
        match r {
            Ok(sol) => {
                criterion.push((z, zeta_criterion(prob, &sol, z)));
                solutions.push((z, sol));
            }
            Err(e) => {
                log::warn!("zeta grid point {z} failed: {e}");
                failed.push(z);
            }
        }
    }
    if solutions.is_empty() {
        return Err(Error::QpNotConverged {
            iterations: 0,
            violation: f64::NAN,
        });
    }
    let mut order: Vec<usize> = (0..criterion.len()).collect();
    order.sort_by(|&i, &j| criterion[i].0.total_cmp(&criterion[j].0));
    let mut best = order[0];
    for &k in &order[1..] {
        if criterion[k].1 > criterion[best].1 {
            best = k;
        }
    }
    Ok(ZetaSelection {
        zeta: criterion[best].0,
        criterion,
        solutions,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaRule {
    /// Use the grid maximizer as is.
    Grid,
    /// Refine the grid maximizer to the exact criterion maximizer.
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub c0: f64,
    pub c_step: f64,
    pub c_max: f64,
    pub zeta_grid: Vec<f64>,
    pub zeta_rule: ZetaRule,
    pub tau_floor: f64,
    /// Also solve the ℓ1 dual and attach `η̂`.
    pub run_dual: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            c0: 0.10,
            c_step: 0.01,
            c_max: 5.0,
            zeta_grid: default_zeta_grid(),
            zeta_rule: ZetaRule::Refined,
            tau_floor: DEFAULT_TAU_FLOOR,
            run_dual: false,
        }
    }
}

/// Smallest `c` on `c0, c0 + step, …, c_max` whose Δ makes the constraints
/// feasible, with the hard solution there. Feasibility is monotone in `c`,
/// so the grid is bisected.
fn escalate(
    base: &BalanceProblem,
    n: usize,
    p: usize,
    cfg: &WeightConfig,
) -> Result<(f64, BalanceProblem, HardSolution)> {
    let steps = ((cfg.c_max - cfg.c0) / cfg.c_step + 1e-9).floor().max(0.0) as usize;
    let c_at = |k: usize| cfg.c0 + k as f64 * cfg.c_step;
    let try_k = |k: usize| -> Result<(BalanceProblem, Option<HardSolution>)> {
        let prob = base.with_delta_cap(delta_schedule(n, p, c_at(k))?);
        let hard = solve_weights_hard(&prob)?;
        Ok((prob, hard))
    };

    let (prob, hard) = try_k(0)?;
    if let Some(h) = hard {
        return Ok((c_at(0), prob, h));
    }
    let (prob_hi, hard_hi) = try_k(steps)?;
    let Some(mut best_hard) = hard_hi else {
        return Err(Error::Infeasible {
            c_max: c_at(steps),
            delta: prob_hi.delta_cap,
            min_imbalance: min_imbalance(&prob_hi)?,
        });
    };
    let mut best = (steps, prob_hi);
    let (mut lo, mut hi) = (0usize, steps);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let (prob, hard) = try_k(mid)?;
        match hard {
            Some(h) => {
                hi = mid;
                best = (mid, prob);
                best_hard = h;
            }
            None => lo = mid,
        }
    }
    log::info!(
        "weight constraints infeasible at c={}; escalated to c={:.2}",
        cfg.c0,
        c_at(best.0)
    );
    Ok((c_at(best.0), best.1, best_hard))
}

/// Builds the weight program from pilot estimates, escalates the Δ constant
/// until the constraints are feasible, selects ζ and returns the weights.
/// The Δ schedule uses `max(p, 2)` so single-covariate designs stay defined.
pub fn compute_weights(
    data: &Dataset,
    model: &dyn ConditionalModel,
    beta: &[f64],
    q_pilot: f64,
    cfg: &WeightConfig,
) -> Result<WeightSolution> {
    if data.n_observed() == 0 {
        return Err(Error::NoObserved);
    }
    let base = BalanceProblem::from_pilot(data, model, beta, q_pilot, 0.0, cfg.tau_floor)?;
    weights_for_problem(&base, data.n(), data.p().max(2), cfg)
}

/// [`compute_weights`] for an already assembled program; its Δ is replaced
/// by the escalated schedule value for `(n, p)`.
pub fn weights_for_problem(base: &BalanceProblem, n: usize, p: usize, cfg: &WeightConfig) -> Result<WeightSolution> {
    let (c_used, prob, hard) = escalate(base, n, p, cfg)?;
    let mut sol = finish(&prob, hard, &cfg.zeta_grid, cfg.zeta_rule)?;
    sol.c_used = Some(c_used);
    if cfg.run_dual {
        sol.eta = solve_weights_dual(&prob, &DualOptions::default())?.eta;
    }
    Ok(sol)
}

/// Weights for the program at its own Δ: ζ selection over `grid` followed by
/// `rule`.
pub fn solve_balance(prob: &BalanceProblem, grid: &[f64], rule: ZetaRule) -> Result<WeightSolution> {
    match solve_weights_hard(prob)? {
        Some(hard) => finish(prob, hard, grid, rule),
        None => Err(Error::InfeasibleAtDelta {
            delta: prob.delta_cap,
            min_imbalance: min_imbalance(prob)?,
        }),
    }
}

fn finish(prob: &BalanceProblem, hard: HardSolution, grid: &[f64], rule: ZetaRule) -> Result<WeightSolution> {
    let selection = select_zeta(prob, grid)?;
    let grid_zeta = selection.zeta;
    let mut sol = match rule {
        ZetaRule::Grid => selection
            .solution(grid_zeta)
            .cloned()
            .expect("selected zeta has a solution"),
        ZetaRule::Refined => {
            let zeta = hard.equivalent_zeta(prob.delta_cap);
            let tol = 1e-8 * prob.delta_cap.max(1.0);
            match solve_weights_primal(prob, zeta) {
                Ok(s) if s.constraint_residual <= prob.delta_cap + tol => s,
                _ => {
                    let gamma = prob.imbalance(&hard.w);
                    WeightSolution::from_weights(prob, hard.w, zeta, gamma, hard.iterations)
                }
            }
        }
    };
    sol.zeta_grid = Some(grid_zeta);
    sol.criterion_curve = selection.criterion;
    sol.failed_zetas = selection.failed;
    Ok(sol)
}

#[derive(Debug, Clone, Copy)]
pub struct DualOptions {
    /// Max `Aⱼ |Δηⱼ|` per sweep at convergence.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_sweeps: 1_000_000,
        }
    }
}

/// Weights from the ℓ1-penalized dual
/// `η̂ = argmin (4n)⁻¹ Σ_{δ=1} (ηᵀÂᵢ)²/τᵢ − n⁻¹ Σ_all Âᵢᵀη + Δ‖η₋₍ₚ₊₁₎‖₁`
/// with `Âᵢ = (bᵢ, 1)`, solved by coordinate descent with the last
/// coordinate unpenalized.
pub fn solve_weights_dual(prob: &BalanceProblem, opts: &DualOptions) -> Result<WeightSolution> {
    let p = prob.p();
    let d = p + 1;
    let n = prob.n as f64;
    let n1 = prob.n1();

    // Q = Σ Âᵢ Âᵢᵀ / τᵢ over observed units.
    let mut q = vec![0.0; d * d];
    let mut ahat = vec![0.0; d];
    for i in 0..n1 {
        let bi = prob.b.row(i);
        ahat[..p].copy_from_slice(bi);
        ahat[p] = 1.0;
        let inv = 1.0 / prob.tau[i];
        for r in 0..d {
            let s = ahat[r] * inv;
            if s == 0.0 {
                continue;
            }
            let row = &mut q[r * d..(r + 1) * d];
            for (qc, ac) in row.iter_mut().zip(&ahat) {
                *qc += s * ac;
            }
        }
    }
    // Linear term n⁻¹ Σ_all Âᵢ = (a, 1).
    let mut lin = prob.a.clone();
    lin.push(1.0);

    let max_diag = (0..d).map(|j| q[j * d + j]).fold(0.0, f64::max);
    let frozen: Vec<usize> = (0..p).filter(|&j| q[j * d + j] <= 1e-14 * max_diag).collect();
    if !frozen.is_empty() {
        log::debug!("dual coordinates {frozen:?} are numerically singular; frozen at 0");
    }

    let mut eta = vec![0.0; d];
    let mut q_eta = vec![0.0; d];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            let qjj = q[j * d + j];
            if qjj <= 0.0 || frozen.contains(&j) {
                continue;
            }
            let a_j = qjj / (2.0 * n);
            let old = eta[j];
            let g = lin[j] - (q_eta[j] - qjj * old) / (2.0 * n);
            let new = if j == p {
                g / a_j
            } else {
                let t = prob.delta_cap;
                (if g > t {
                    g - t
                } else if g < -t {
                    g + t
                } else {
                    0.0
                }) / a_j
            };
            let diff = new - old;
            if diff != 0.0 {
                eta[j] = new;
                let col = &q[j * d..(j + 1) * d];
                for (qe, qc) in q_eta.iter_mut().zip(col) {
                    *qe += diff * qc;
                }
                max_change = max_change.max(a_j * diff.abs());
            }
        }
        if max_change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("dual coordinate descent stopped after {sweeps} sweeps");
    }

    let w: Vec<f64> = (0..n1)
        .map(|i| {
            let s = dot(prob.b.row(i), &eta[..p]) + eta[p];
            s / (2.0 * n * prob.tau[i])
        })
        .collect();
    let mu = eta[..p].iter().map(|e| e.abs()).sum::<f64>() / n;
    let zeta = if mu > 0.0 && prob.delta_cap > 0.0 {
        let lambda = mu / (2.0 * prob.delta_cap);
        lambda / (1.0 + lambda)
    } else {
        0.0
    };
    let gamma = prob.imbalance(&w);
    let mut sol = WeightSolution::from_weights(prob, w, zeta, gamma, sweeps);
    sol.eta = Some(eta);
    Ok(sol)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting; `None` if singular.
    fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let k = b.len();
        for c in 0..k {
            let piv = (c..k).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
            if m[piv][c].abs() < 1e-12 {
                return None;
            }
            m.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..k {
                let f = m[r][c] / m[c][c];
                for cc in c..k {
                    m[r][cc] -= f * m[c][cc];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; k];
        for r in (0..k).rev() {
            let s: f64 = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / m[r][r];
        }
        Some(x)
    }

    /// `min ½xᵀdiag(g)x` s.t. `eq` rows hold with equality and `ineq` rows
    /// hold as `≥`, by enumerating every active subset of the inequalities.
    pub(crate) fn enumerate_qp(g: &[f64], eq: &[(Vec<f64>, f64)], ineq: &[(Vec<f64>, f64)]) -> Option<(Vec<f64>, f64)> {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for mask in 0u32..(1 << ineq.len()) {
            let rows: Vec<&(Vec<f64>, f64)> = eq
                .iter()
                .chain(
                    ineq.iter()
                        .enumerate()
                        .filter(|(k, _)| mask >> k & 1 == 1)
                        .map(|(_, r)| r),
                )
                .collect();
            if rows.len() > g.len() {
                continue;
            }
            let m: Vec<Vec<f64>> = rows
                .iter()
                .map(|ri| {
                    rows.iter()
                        .map(|rj| ri.0.iter().zip(&rj.0).zip(g).map(|((a, b), gi)| a * b / gi).sum())
                        .collect()
                })
                .collect();
            let Some(mu) = solve_dense(m, rows.iter().map(|r| r.1).collect()) else {
                continue;
            };
            let x: Vec<f64> = (0..g.len())
                .map(|i| rows.iter().zip(&mu).map(|(r, m)| r.0[i] * m).sum::<f64>() / g[i])
                .collect();
            let feasible = ineq
                .iter()
                .all(|(r, b)| r.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() >= b - 1e-10);
            if !feasible {
                continue;
            }
            let obj = 0.5 * x.iter().zip(g).map(|(v, gi)| gi * v * v).sum::<f64>();
            if best.as_ref().is_none_or(|b| obj < b.1) {
                best = Some((x, obj));
            }
        }
        best
    }

    fn zeta_form_oracle(prob: &BalanceProblem, zeta: f64) -> (Vec<f64>, f64) {
        let n1 = prob.n1();
        let mut g: Vec<f64> = prob.tau().iter().map(|t| 2.0 * (1.0 - zeta) * t).collect();
        g.push(2.0 * zeta);
        let mut sum_row = vec![1.0; n1];
        sum_row.push(0.0);
        let mut ineq = Vec::new();
        for j in 0..prob.p() {
            let col: Vec<f64> = (0..n1).map(|i| prob.b().get(i, j)).collect();
            let mut up = col.clone();
            up.push(1.0);
            ineq.push((up, prob.a()[j]));
            let mut dn: Vec<f64> = col.iter().map(|v| -v).collect();
            dn.push(1.0);
            ineq.push((dn, -prob.a()[j]));
        }
        enumerate_qp(&g, &[(sum_row, 1.0)], &ineq).expect("zeta form is always feasible")
    }

    pub(crate) fn hard_oracle(prob: &BalanceProblem) -> Option<(Vec<f64>, f64)> {
        let n1 = prob.n1();
        let g: Vec<f64> = prob.tau().iter().map(|t| 2.0 * t).collect();
        let d = prob.delta_cap();
        let mut ineq = Vec::new();
        for j in 0..prob.p() {
            let col: Vec<f64> = (0..n1).map(|i| prob.b().get(i, j)).collect();
            ineq.push((col.clone(), prob.a()[j] - d));
            ineq.push((col.iter().map(|v| -v).collect(), -prob.a()[j] - d));
        }
        enumerate_qp(&g, &[(vec![1.0; n1], 1.0)], &ineq)
    }

    /// Random program with a known feasible point.
    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, n1: usize, p: usize, slack: f64) -> BalanceProblem {
        let tau: Vec<f64> = (0..n1).map(|_| rng.random_range(0.03..0.25)).collect();
        let rows: Vec<f64> = (0..n1 * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = Matrix::from_vec(n1, p, rows).unwrap();
        let raw: Vec<f64> = (0..n1).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w0: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let noise: Vec<f64> = (0..p).map(|_| rng.random_range(-0.3..0.3)).collect();
        let mut a = vec![0.0; p];
        for i in 0..n1 {
            for j in 0..p {
                a[j] += w0[i] * b.get(i, j);
            }
        }
        for (aj, e) in a.iter_mut().zip(&noise) {
            *aj += e;
        }
        let delta = noise.iter().fold(0.0f64, |m, e| m.max(e.abs())) * slack;
        BalanceProblem::new(tau, b, a, delta, 3 * n1).unwrap()
    }

    fn zero_b(tau: Vec<f64>, a: Vec<f64>, delta: f64) -> BalanceProblem {
        let n1 = tau.len();
        let p = a.len();
        BalanceProblem::new(tau, Matrix::zeros(n1, p), a, delta, n1).unwrap()
    }

    #[test]
    fn delta_schedule_values() {
        let d = delta_schedule(256, 2981, 1.0).unwrap();
        let oracle = (1.0 / 2f64.powf(2.5)) * 2981f64.ln().powf(0.125);
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 0.22926).abs() < 1e-4);
        assert!(delta_schedule(100, 10, 0.0).is_err());
        assert!(delta_schedule(100, 1, 1.0).is_err());
        assert_eq!(
            delta_schedule(100, 10, 0.6).unwrap(),
            2.0 * delta_schedule(100, 10, 0.3).unwrap()
        );
    }

    #[test]
    fn symmetric_units_with_vacuous_balance() {
        let prob = zero_b(vec![0.25, 0.25], vec![0.3, -0.7], 0.1);
        for zeta in [0.0, 0.3, 0.9] {
            let sol = solve_weights_primal(&prob, zeta).unwrap();
            assert!((sol.w[0] - 0.5).abs() < 1e-9 && (sol.w[1] - 0.5).abs() < 1e-9);
            assert!((sol.gamma - 0.7).abs() < 1e-9, "zeta {zeta}: gamma {}", sol.gamma);
        }
    }

    #[test]
    fn inverse_tau_closed_form() {
        let prob = zero_b(vec![0.1, 0.2, 0.25], vec![0.0], 0.1);
        let sol = solve_weights_primal(&prob, 0.0).unwrap();
        for (w, e) in sol.w.iter().zip([10.0 / 19.0, 5.0 / 19.0, 4.0 / 19.0]) {
            assert!((w - e).abs() < 1e-6);
        }
        assert!((0.52632 - sol.w[0]).abs() < 1e-5);
    }

    #[test]
    fn primal_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let prob = random_problem(&mut rng, 8, 3, 0.5);
            let (_, obj) = zeta_form_oracle(&prob, 0.5);
            let sol = solve_weights_primal(&prob, 0.5).unwrap();
            let mine = 0.5 * prob.objective(&sol.w) + 0.5 * sol.gamma * sol.gamma;
            assert!((mine - obj).abs() < 1e-6, "{mine} vs {obj}");
            assert!((sol.w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(sol.constraint_residual <= sol.gamma + 1e-9);
        }
    }

    #[test]
    fn hard_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let prob = random_problem(&mut rng, 8, 4, 1.0);
            let (w_o, obj) = hard_oracle(&prob).expect("feasible by construction");
            let hard = solve_weights_hard(&prob).unwrap().unwrap();
            assert!((prob.objective(&hard.w) - 2.0 * obj / 2.0).abs() < 1e-8);
            let dev = hard.w.iter().zip(&w_o).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(dev < 1e-6);
        }
    }

    #[test]
    fn infeasible_hard_program_is_detected() {
        // One unit pins w = 1, so the imbalance is fixed at 0.5.
        let prob =
            BalanceProblem::new(vec![0.2], Matrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![1.5], 0.4, 2).unwrap();
        assert!(solve_weights_hard(&prob).unwrap().is_none());
        assert!((min_imbalance(&prob).unwrap() - 0.5).abs() < 1e-9);
        let ok = prob.with_delta_cap(0.6);
        let h = solve_weights_hard(&ok).unwrap().unwrap();
        assert_eq!(h.w, vec![1.0]);
        assert!(matches!(
            solve_balance(&prob, &default_zeta_grid(), ZetaRule::Refined),
            Err(Error::InfeasibleAtDelta { .. })
        ));
    }

    #[test]
    fn slack_constraint_selects_zero_zeta() {
        let prob = zero_b(vec![0.1, 0.2, 0.25], vec![0.2, -0.1], 0.5);
        let sel = select_zeta(&prob, &default_zeta_grid()).unwrap();
        assert_eq!(sel.zeta, 0.0);
        assert_eq!(sel.criterion.len(), 100);
        let single = select_zeta(&prob, &[0.5]).unwrap();
        assert_eq!(single.zeta, 0.5);
        assert!(select_zeta(&prob, &[1.0]).is_err());
    }

    #[test]
    fn selected_zeta_maximizes_recomputed_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let prob = random_problem(&mut rng, 10, 4, 0.5);
            let grid = default_zeta_grid();
            let sel = select_zeta(&prob, &grid).unwrap();
            let mut best = (f64::NAN, f64::NEG_INFINITY);
            for &z in &grid {
                let s = solve_weights_primal(&prob, z).unwrap();
                let r = prob.imbalance(&s.w);
                let d = prob.delta_cap();
                let c = prob.objective(&s.w) + z / (1.0 - z) * (r * r - d * d);
                if c > best.1 {
                    best = (z, c);
                }
            }
            assert_eq!(sel.zeta, best.0);
        }
    }

    #[test]
    fn refined_solution_is_the_hard_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let prob = random_problem(&mut rng, 10, 3, 1.0);
            let sol = solve_balance(&prob, &default_zeta_grid(), ZetaRule::Refined).unwrap();
            let (_, obj) = hard_oracle(&prob).unwrap();
            assert!((sol.objective - obj).abs() < 1e-8);
            assert!(sol.constraint_residual <= prob.delta_cap() + 1e-6);
            assert!((sol.w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            let grid_sol = solve_balance(&prob, &default_zeta_grid(), ZetaRule::Grid).unwrap();
            assert_eq!(grid_sol.zeta, sol.zeta_grid.unwrap());
        }
    }

    #[test]
    fn vacuous_covariates_give_inverse_tau_weights() {
        let n = 6;
        let x = Matrix::zeros(n, 3);
        let y = vec![0.1, -0.4, 0.3, 1.2, -0.8, 0.5];
        let delta = vec![true, true, false, true, true, false];
        let data = Dataset::new(x, y, delta).unwrap();
        let model = crate::model::NormalLinearModel::default();
        let sol = compute_weights(&data, &model, &[0.0; 3], 0.2, &WeightConfig::default()).unwrap();
        assert_eq!(sol.c_used, Some(0.10));
        let expect = 1.0 / sol.w.len() as f64;
        for w in &sol.w {
            assert!((w - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn single_observed_unit() {
        let prob = BalanceProblem::new(
            vec![0.2],
            Matrix::from_vec(1, 2, vec![0.5, -0.2]).unwrap(),
            vec![0.4, 0.0],
            0.3,
            5,
        )
        .unwrap();
        let sol = solve_balance(&prob, &default_zeta_grid(), ZetaRule::Refined).unwrap();
        assert_eq!(sol.w, vec![1.0]);
        assert!((sol.constraint_residual - 0.2).abs() < 1e-12);
        assert!(solve_balance(&prob.with_delta_cap(0.1), &default_zeta_grid(), ZetaRule::Refined).is_err());
    }

    #[test]
    fn escalation_reaches_a_feasible_constant() {
        // Imbalance is at least 0.5; Δ(c) = c·n^{-5/16}(log p)^{1/8}.
        let base = BalanceProblem::new(
            vec![0.2],
            Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
            vec![1.5, 0.0],
            0.0,
            16,
        )
        .unwrap();
        let cfg = WeightConfig::default();
        let sol = weights_for_problem(&base, 16, 2, &cfg).unwrap();
        let c = sol.c_used.unwrap();
        let unit = delta_schedule(16, 2, 1.0).unwrap();
        assert!(c * unit >= 0.5 - 1e-12);
        assert!((c - cfg.c_step) * unit < 0.5);
        let tight = WeightConfig { c_max: 0.5, ..cfg };
        match weights_for_problem(&base, 16, 2, &tight) {
            Err(Error::Infeasible { min_imbalance, .. }) => assert!((min_imbalance - 0.5).abs() < 1e-6),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn dual_with_intercept_only() {
        let tau = vec![0.1, 0.2, 0.25, 0.05];
        let prob = BalanceProblem::new(tau.clone(), Matrix::zeros(4, 0), vec![], 0.1, 10).unwrap();
        let sol = solve_weights_dual(&prob, &DualOptions::default()).unwrap();
        let s: f64 = tau.iter().map(|t| 1.0 / t).sum();
        for (w, t) in sol.w.iter().zip(&tau) {
            assert!((w - 1.0 / t / s).abs() < 1e-8);
        }
        assert!((sol.w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dual_with_huge_delta_reproduces_inverse_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let prob = random_problem(&mut rng, 8, 3, 1.0).with_delta_cap(1e6);
        let sol = solve_weights_dual(&prob, &DualOptions::default()).unwrap();
        let eta = sol.eta.unwrap();
        assert!(eta[..3].iter().all(|e| *e == 0.0));
        for (w, e) in sol.w.iter().zip(prob.inverse_tau_weights()) {
            assert!((w - e).abs() < 1e-8);
        }
    }

    #[test]
    fn dual_agrees_with_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let prob = random_problem(&mut rng, 8, 3, 0.5);
            let primal = solve_balance(&prob, &default_zeta_grid(), ZetaRule::Refined).unwrap();
            let dual = solve_weights_dual(&prob, &DualOptions::default()).unwrap();
            let dev = primal
                .w
                .iter()
                .zip(&dual.w)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(dev < 1e-4, "weights differ by {dev}");
            assert!((primal.objective - dual.objective).abs() < 1e-5);
            assert!((primal.zeta - dual.zeta).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_pilot_probabilities_are_clamped() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.0]]).unwrap();
        let data = Dataset::new(x, vec![0.0, 1.0, 2.0], vec![true, true, true]).unwrap();
        let model = crate::model::NormalLinearModel::default();
        // Index 40 puts h(0, 40) at 0 to machine precision.
        let prob = BalanceProblem::from_pilot(&data, &model, &[40.0], 0.0, 0.1, DEFAULT_TAU_FLOOR).unwrap();
        assert_eq!(prob.degenerate_units(), &[0, 1]);
        assert!(prob.tau().iter().all(|t| *t > 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn returned_weights_are_feasible(seed in 0u64..10_000, n1 in 2usize..12, p in 1usize..5, slack in 1.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, n1, p, slack);
            let sol = solve_balance(&prob, &default_zeta_grid(), ZetaRule::Refined).unwrap();
            prop_assert!((sol.w.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            prop_assert!(sol.constraint_residual <= prob.delta_cap() + 1e-6);
            prop_assert!(sol.objective.is_finite());
        }

        #[test]
        fn beats_sampled_feasible_points(seed in 0u64..10_000, n1 in 2usize..=12, p in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, n1, p, 1.0);
            let hard = solve_weights_hard(&prob).unwrap().unwrap();
            let best = prob.objective(&hard.w);
            let mut accepted = 0;
            for _ in 0..20_000 {
                if accepted == 100 {
                    break;
                }
                let scale = rng.random_range(0.0..0.5);
                let mut d: Vec<f64> = (0..n1).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = d.iter().sum::<f64>() / n1 as f64;
                d.iter_mut().for_each(|v| *v = (*v - mean) * scale);
                let w: Vec<f64> = hard.w.iter().zip(&d).map(|(a, b)| a + b).collect();
                if prob.imbalance(&w) <= prob.delta_cap() {
                    accepted += 1;
                    prop_assert!(best <= prob.objective(&w) + 1e-8);
                }
            }
        }

        #[test]
        fn objective_decreases_with_delta(seed in 0u64..10_000, n1 in 3usize..12, p in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, n1, p, 1.0);
            let d = prob.delta_cap();
            let mut prev = f64::INFINITY;
            for k in 0..5 {
                let s = solve_weights_hard(&prob.with_delta_cap(d * (1.0 + 0.5 * k as f64))).unwrap().unwrap();
                let obj = prob.objective(&s.w);
                prop_assert!(obj <= prev + 1e-10);
                prev = obj;
            }
        }

        #[test]
        fn tau_scale_leaves_minimizer_unchanged(seed in 0u64..10_000, n1 in 2usize..12, p in 1usize..5, k in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, n1, p, 1.0);
            let scaled = BalanceProblem::new(
                prob.tau().iter().map(|t| t * k).collect(),
                prob.b().clone(),
                prob.a().to_vec(),
                prob.delta_cap(),
                prob.n(),
            ).unwrap();
            let w1 = solve_weights_hard(&prob).unwrap().unwrap().w;
            let w2 = solve_weights_hard(&scaled).unwrap().unwrap().w;
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
