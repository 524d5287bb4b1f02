//! Structured reports and their text rendering.

use std::fmt::Write as _;

use balquant::{AipwEstimate, ContrastEstimate, DgpKind, McReport, QuantileEstimate};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::ingest::GroupSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub estimator: String,
    pub stage: Option<String>,
    pub message: String,
    pub exit_code: i32,
}

impl Failure {
    pub fn new(estimator: &str, err: &CliError) -> Self {
        Self {
            estimator: estimator.to_string(),
            stage: err.stage(),
            message: err.to_string(),
            exit_code: err.exit_code(),
        }
    }
}

fn exit_code(failures: &[Failure]) -> i32 {
    failures.iter().map(|f| f.exit_code).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub data: GroupSummary,
    pub proposed: Option<QuantileEstimate>,
    pub aipw: Option<AipwEstimate>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AipwContrast {
    pub m_hat: f64,
    pub group0: AipwEstimate,
    pub group1: AipwEstimate,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub group0: GroupSummary,
    pub group1: GroupSummary,
    pub proposed: Option<ContrastEstimate>,
    pub aipw: Option<AipwContrast>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSetting {
    pub dgp: DgpKind,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub reports: Vec<McReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub settings: Vec<SimulationSetting>,
    pub failures: Vec<Failure>,
}

/// Report for a command that failed before producing estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub command: String,
    pub error: Failure,
}

pub trait Report: Serialize {
    fn render_text(&self) -> String;
    fn exit_code(&self) -> i32;

    fn render_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn estimate_row(out: &mut String, label: &str, q: f64, se: f64, lo: f64, hi: f64) {
    let _ = writeln!(out, "{label:<10} {q:>12.6} {se:>12.6} {lo:>12.6} {hi:>12.6}");
}

fn header(out: &mut String, first: &str) {
    let _ = writeln!(
        out,
        "{first:<10} {:>12} {:>12} {:>12} {:>12}",
        "q_hat", "se", "ci_lower", "ci_upper"
    );
}

fn diagnostics(out: &mut String, e: &QuantileEstimate) {
    let w = &e.weights;
    let rows: [(&str, String); 12] = [
        ("q_pilot", format!("{:.6}", e.q_pilot)),
        ("sigma_hat", format!("{:.6}", e.sigma2_hat.sqrt())),
        ("lambda", format!("{:.6e}", e.lambda)),
        ("support", e.support_size.to_string()),
        ("delta", format!("{:.6e}", w.delta_cap)),
        ("c_used", fmt_opt(w.c_used)),
        ("zeta", format!("{:.6}", w.zeta)),
        ("gamma", format!("{:.6e}", w.gamma)),
        ("imbalance", format!("{:.6e}", w.constraint_residual)),
        ("objective", format!("{:.6e}", w.objective)),
        ("eq_residual", format!("{:.3e}", e.eq_residual)),
        ("observed", format!("{}/{}", e.n_observed, e.n)),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "  {k:<12} {v}");
    }
}

fn failures_text(out: &mut String, failures: &[Failure]) {
    for f in failures {
        let stage = f.stage.as_deref().unwrap_or("-");
        let _ = writeln!(out, "error [{}] stage={stage}: {}", f.estimator, f.message);
    }
}

impl Report for EstimateReport {
    fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tau = {}  alpha = {}  n = {}  observed = {}  p = {}",
            self.config.tau_level, self.config.alpha, self.data.n, self.data.n_observed, self.data.p
        );
        header(&mut out, "estimator");
        if let Some(e) = &self.proposed {
            estimate_row(&mut out, "proposed", e.q_hat, e.std_error(), e.ci_lower, e.ci_upper);
        }
        if let Some(e) = &self.aipw {
            estimate_row(&mut out, "aipw", e.q_hat, e.std_error(), e.ci_lower, e.ci_upper);
        }
        if let Some(e) = &self.proposed {
            let _ = writeln!(out, "\nproposed diagnostics");
            diagnostics(&mut out, e);
        }
        if let Some(e) = &self.aipw {
            let _ = writeln!(
                out,
                "\naipw diagnostics\n  clamped      {}\n  eq_residual  {:.3e}",
                e.clamp_count, e.eq_residual
            );
        }
        if !self.data.constant_columns.is_empty() {
            let _ = writeln!(out, "\nconstant covariates: {}", self.data.constant_columns.join(", "));
        }
        failures_text(&mut out, &self.failures);
        out
    }

    fn exit_code(&self) -> i32 {
        exit_code(&self.failures)
    }
}

fn group_name(g: &GroupSummary, k: usize) -> String {
    g.label.clone().unwrap_or_else(|| format!("group{k}"))
}

impl Report for ContrastReport {
    fn render_text(&self) -> String {
        let mut out = String::new();
        let (l0, l1) = (group_name(&self.group0, 0), group_name(&self.group1, 1));
        let mut block = |name: &str, g0: (f64, f64, f64), g1: (f64, f64, f64), m: (f64, f64, f64)| {
            let _ = writeln!(out, "{name}");
            let _ = writeln!(out, "  {:<10} {:>12} {:>12} {:>12}", "", l1, l0, "contrast");
            let _ = writeln!(out, "  {:<10} {:>12.4} {:>12.4} {:>12.4}", "estimate", g1.0, g0.0, m.0);
            let _ = writeln!(out, "  {:<10} {:>12.4} {:>12.4} {:>12.4}", "ci_lower", g1.1, g0.1, m.1);
            let _ = writeln!(out, "  {:<10} {:>12.4} {:>12.4} {:>12.4}", "ci_upper", g1.2, g0.2, m.2);
        };
        if let Some(c) = &self.proposed {
            block(
                "proposed",
                (c.group0.q_hat, c.group0.ci_lower, c.group0.ci_upper),
                (c.group1.q_hat, c.group1.ci_lower, c.group1.ci_upper),
                (c.m_hat, c.ci_lower, c.ci_upper),
            );
        }
        if let Some(c) = &self.aipw {
            block(
                "aipw",
                (c.group0.q_hat, c.group0.ci_lower, c.group0.ci_upper),
                (c.group1.q_hat, c.group1.ci_lower, c.group1.ci_upper),
                (c.m_hat, c.ci_lower, c.ci_upper),
            );
        }
        if let Some(c) = &self.proposed {
            for (name, e) in [(&l1, &c.group1), (&l0, &c.group0)] {
                let _ = writeln!(out, "\ndiagnostics ({name})");
                diagnostics(&mut out, e);
            }
        }
        failures_text(&mut out, &self.failures);
        out
    }

    fn exit_code(&self) -> i32 {
        exit_code(&self.failures)
    }
}

impl Report for SimulateReport {
    fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<5} {:>5} {:>5} {:<9} {:>8} {:>8} {:>8} {:>7} {:>8} {:>6}",
            "dgp", "n", "p", "method", "bias", "sd", "rmse", "cp", "esd", "fail"
        );
        for s in &self.settings {
            let dgp = match s.dgp {
                DgpKind::Dgp1 => "1",
                DgpKind::Dgp2 => "2",
            };
            for r in &s.reports {
                let _ = writeln!(
                    out,
                    "{:<5} {:>5} {:>5} {:<9} {:>8.3} {:>8.3} {:>8.3} {:>7.3} {:>8.3} {:>6}",
                    dgp,
                    s.n,
                    s.p,
                    r.estimator,
                    r.bias,
                    r.sd,
                    r.rmse,
                    r.cp,
                    r.esd,
                    r.failures.len()
                );
            }
        }
        failures_text(&mut out, &self.failures);
        out
    }

    fn exit_code(&self) -> i32 {
        exit_code(&self.failures)
    }
}

impl Report for ErrorReport {
    fn render_text(&self) -> String {
        let mut out = String::new();
        failures_text(&mut out, std::slice::from_ref(&self.error));
        out
    }

    fn exit_code(&self) -> i32 {
        self.error.exit_code
    }
}
