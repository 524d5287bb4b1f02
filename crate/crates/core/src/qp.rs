//! Dual active-set solver for strictly convex QPs with a diagonal Hessian.
//!
//! Solves `min ½ xᵀ diag(g) x + cᵀx` subject to `nₖᵀx = bₖ` for the first
//! `n_eq` constraints and `nₖᵀx ≥ bₖ` for the rest, following Goldfarb and
//! Idnani. The active-set normal matrix `Nᵀ G⁻¹ N` is kept as an updatable
//! Cholesky factor, so each step costs `O(dim·k + k²)` for `k` active
//! constraints plus one pass over all constraints to find a violation.

/// Implicitly stored constraint rows.
pub trait ConstraintSet: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Leading constraints that hold with equality.
    fn n_eq(&self) -> usize;
    fn rhs(&self, c: usize) -> f64;
    /// `n_cᵀ x`.
    fn dot(&self, c: usize, x: &[f64]) -> f64;
    /// `out += alpha · n_c`.
    fn axpy(&self, c: usize, alpha: f64, out: &mut [f64]);
    /// `out[c] = n_cᵀ x - b_c` for every constraint.
    fn slacks(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.dot(c, x) - self.rhs(c);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Constraints with slack above `-feas_tol` count as satisfied.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-11,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// `(constraint, multiplier)` for the final active set.
    pub active: Vec<(usize, f64)>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub enum QpFailure {
    Infeasible { violation: f64 },
    NotConverged { iterations: usize, violation: f64 },
}

/// Lower-triangular factor with row append and row/column deletion.
struct Chol {
    rows: Vec<Vec<f64>>,
}

impl Chol {
    fn k(&self) -> usize {
        self.rows.len()
    }

    fn forward(&self, d: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut y = vec![0.0; k];
        for i in 0..k {
            let row = &self.rows[i];
            let s: f64 = (0..i).map(|j| row[j] * y[j]).sum();
            y[i] = (d[i] - s) / row[i];
        }
        y
    }

    fn backward(&self, y: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut r = y.to_vec();
        for i in (0..k).rev() {
            r[i] /= self.rows[i][i];
            let ri = r[i];
            for j in 0..i {
                r[j] -= self.rows[i][j] * ri;
            }
        }
        r
    }

    /// Appends the row `[l, diag]` where `l = L⁻¹ d` was computed by `forward`.
    fn push(&mut self, l: Vec<f64>, diag: f64) {
        for row in self.rows.iter_mut() {
            row.push(0.0);
        }
        let mut row = l;
        row.push(diag);
        self.rows.push(row);
    }

    fn remove(&mut self, idx: usize) {
        self.rows.remove(idx);
        let k = self.rows.len();
        // Rows idx.. now carry one superdiagonal entry; rotate it away.
        for c in idx..k {
            let a = self.rows[c][c];
            let b = self.rows[c][c + 1];
            if b == 0.0 {
                continue;
            }
            let r = a.hypot(b);
            let (cs, sn) = (a / r, b / r);
            for i in c..k {
                let x = self.rows[i][c];
                let y = self.rows[i][c + 1];
                self.rows[i][c] = cs * x + sn * y;
                self.rows[i][c + 1] = -sn * x + cs * y;
            }
            self.rows[c][c + 1] = 0.0;
        }
        for row in self.rows.iter_mut() {
            row.pop();
        }
    }
}

struct Active {
    idx: Vec<usize>,
    u: Vec<f64>,
    /// `G⁻¹ n_c` for each active constraint.
    ginv_n: Vec<Vec<f64>>,
    chol: Chol,
}

impl Active {
    fn remove(&mut self, pos: usize) {
        self.idx.remove(pos);
        self.u.remove(pos);
        self.ginv_n.remove(pos);
        self.chol.remove(pos);
    }
}

/// Solves the QP. `g` must be strictly positive.
pub fn solve<C: ConstraintSet + ?Sized>(
    g: &[f64],
    lin: Option<&[f64]>,
    cons: &C,
    opts: &QpOptions,
) -> std::result::Result<QpSolution, QpFailure> {
    let dim = cons.dim();
    debug_assert_eq!(g.len(), dim);
    let m = cons.len();
    let n_eq = cons.n_eq();
    let max_iter = if opts.max_iter == 0 {
        20 * (m + dim) + 100
    } else {
        opts.max_iter
    };

    let mut x: Vec<f64> = match lin {
        Some(c) => c.iter().zip(g).map(|(ci, gi)| -ci / gi).collect(),
        None => vec![0.0; dim],
    };
    let mut act = Active {
        idx: Vec::new(),
        u: Vec::new(),
        ginv_n: Vec::new(),
        chol: Chol { rows: Vec::new() },
    };
    let mut slack = vec![0.0; m];
    let mut iterations = 0;

    let direction = |act: &Active, p: usize| {
        let mut v = vec![0.0; dim];
        cons.axpy(p, 1.0, &mut v);
        v.iter_mut().zip(g).for_each(|(vi, gi)| *vi /= gi);
        let d: Vec<f64> = act.idx.iter().map(|&a| cons.dot(a, &v)).collect();
        let diag = cons.dot(p, &v);
        let l = act.chol.forward(&d);
        let r = act.chol.backward(&l);
        let mut z = v.clone();
        for (rk, vk) in r.iter().zip(&act.ginv_n) {
            for (zi, vi) in z.iter_mut().zip(vk) {
                *zi -= rk * vi;
            }
        }
        let zn = diag - l.iter().map(|t| t * t).sum::<f64>();
        (v, l, r, z, zn, diag)
    };

    // Equalities take full steps; their multipliers are unrestricted.
    for e in 0..n_eq {
        let s = cons.dot(e, &x) - cons.rhs(e);
        let (v, l, r, z, zn, diag) = direction(&act, e);
        if zn <= 1e-13 * diag.max(1e-300) {
            if s.abs() > opts.feas_tol {
                return Err(QpFailure::Infeasible { violation: s.abs() });
            }
            continue;
        }
        let t = -s / zn;
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += t * zi);
        act.u.iter_mut().zip(&r).for_each(|(u, rk)| *u -= t * rk);
        act.idx.push(e);
        act.u.push(t);
        act.ginv_n.push(v);
        act.chol.push(l, zn.sqrt());
    }

    loop {
        cons.slacks(&x, &mut slack);
        let mut p = usize::MAX;
        let mut worst = -opts.feas_tol;
        for (c, &s) in slack.iter().enumerate().skip(n_eq) {
            if s < worst && !act.idx.contains(&c) {
                worst = s;
                p = c;
            }
        }
        if p == usize::MAX {
            break;
        }
        let mut s_p = slack[p];
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpFailure::NotConverged {
                    iterations,
                    violation: -s_p,
                });
            }
            let (v, l, r, z, zn, diag) = direction(&act, p);

            let mut t1 = f64::INFINITY;
            let mut drop = usize::MAX;
            for (k, (&c, &rk)) in act.idx.iter().zip(&r).enumerate() {
                if c >= n_eq && rk > 0.0 {
                    let t = act.u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = k;
                    }
                }
            }
            let dependent = zn <= 1e-12 * diag.max(1e-300);
            let t2 = if dependent { f64::INFINITY } else { -s_p / zn };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(QpFailure::Infeasible { violation: -s_p });
            }

            act.u.iter_mut().zip(&r).for_each(|(u, rk)| *u -= t * rk);
            u_p += t;
            if dependent {
                act.remove(drop);
                continue;
            }
            x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += t * zi);
            s_p += t * zn;
            if t2 <= t1 {
                act.idx.push(p);
                act.u.push(u_p);
                act.ginv_n.push(v);
                act.chol.push(l, zn.sqrt());
                break;
            }
            act.remove(drop);
        }
    }

    let objective = 0.5 * x.iter().zip(g).map(|(xi, gi)| gi * xi * xi).sum::<f64>()
        + lin.map_or(0.0, |c| c.iter().zip(&x).map(|(a, b)| a * b).sum());
    Ok(QpSolution {
        active: act.idx.into_iter().zip(act.u).collect(),
        x,
        objective,
        iterations,
    })
}
