//! Command handlers. Each returns a report; failures inside an estimator are
//! recorded in the report rather than aborting the command.

use std::path::PathBuf;

use balquant::{
    contrast, contrast_interval, estimate, estimate_aipw, run_study, DgpKind, DgpSpec, EstimatorKind,
    NormalLinearModel, StudyConfig,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::{ingest_csv, GroupData, IngestOptions};
use crate::report::{AipwContrast, ContrastReport, EstimateReport, Failure, SimulateReport, SimulationSetting};

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub path: PathBuf,
    pub ingest: IngestOptions,
    pub run: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateArgs {
    pub dgp: DgpKind,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    /// Runs every `n ∈ {200, 400}`, `p ∈ {n/4, n/2}` setting instead of `(n, p)`.
    pub grid: bool,
    pub run: RunConfig,
}

fn ingest(args: &EstimateArgs) -> Result<Vec<GroupData>> {
    args.run.validate()?;
    let opts = IngestOptions {
        expand_interactions: args.run.expand_interactions,
        ..args.ingest.clone()
    };
    ingest_csv(&args.path, &opts)
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateReport> {
    if args.ingest.group_column.is_some() {
        return Err(CliError::Input("estimate takes no group column; use contrast".into()));
    }
    let groups = ingest(args)?;
    let g = &groups[0];
    let model = NormalLinearModel::default();
    let mut report = EstimateReport {
        command: "estimate",
        config: args.run.clone(),
        data: g.summary(),
        proposed: None,
        aipw: None,
        failures: Vec::new(),
    };
    if args.run.estimator.proposed() {
        match estimate(&g.data, &model, &args.run.estimator_config()) {
            Ok(e) => report.proposed = Some(e),
            Err(e) => report.failures.push(Failure::new("proposed", &e.into())),
        }
    }
    if args.run.estimator.aipw() {
        match estimate_aipw(&g.data, &model, &args.run.aipw_config()) {
            Ok(e) => report.aipw = Some(e),
            Err(e) => report.failures.push(Failure::new("aipw", &e.into())),
        }
    }
    Ok(report)
}

pub fn cmd_contrast(args: &EstimateArgs) -> Result<ContrastReport> {
    if args.ingest.group_column.is_none() {
        return Err(CliError::Input("contrast needs a group column".into()));
    }
    let groups = ingest(args)?;
    if groups.len() != 2 {
        return Err(CliError::Input(format!(
            "group column must have exactly two values, found {}",
            groups.len()
        )));
    }
    let (g0, g1) = (&groups[0], &groups[1]);
    let model = NormalLinearModel::default();
    let mut report = ContrastReport {
        command: "contrast",
        config: args.run.clone(),
        group0: g0.summary(),
        group1: g1.summary(),
        proposed: None,
        aipw: None,
        failures: Vec::new(),
    };
    if args.run.estimator.proposed() {
        match contrast(&g0.data, &g1.data, &model, &args.run.estimator_config()) {
            Ok(c) => report.proposed = Some(c),
            Err(e) => report.failures.push(Failure::new("proposed", &e.into())),
        }
    }
    if args.run.estimator.aipw() {
        let cfg = args.run.aipw_config();
        match estimate_aipw(&g0.data, &model, &cfg).and_then(|a0| Ok((a0, estimate_aipw(&g1.data, &model, &cfg)?))) {
            Ok((a0, a1)) => {
                let m_hat = a1.q_hat - a0.q_hat;
                let (ci_lower, ci_upper) = contrast_interval(m_hat, a1.std_error(), a0.std_error(), cfg.base.alpha);
                report.aipw = Some(AipwContrast {
                    m_hat,
                    group0: a0,
                    group1: a1,
                    ci_lower,
                    ci_upper,
                    alpha: cfg.base.alpha,
                });
            }
            Err(e) => report.failures.push(Failure::new("aipw", &e.into())),
        }
    }
    Ok(report)
}

fn settings(args: &SimulateArgs) -> Vec<(usize, usize)> {
    if args.grid {
        [200, 400].iter().flat_map(|&n| [(n, n / 4), (n, n / 2)]).collect()
    } else {
        vec![(args.n, args.p)]
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateReport> {
    args.run.validate()?;
    if args.run.tau_level != 0.5 {
        return Err(CliError::Input(
            "simulation designs are defined for the median (--tau 0.5)".into(),
        ));
    }
    if args.reps == 0 {
        return Err(CliError::Input("--reps must be at least 1".into()));
    }
    let mut estimators = Vec::new();
    if args.run.estimator.proposed() {
        estimators.push(EstimatorKind::Proposed);
    }
    if args.run.estimator.aipw() {
        estimators.push(EstimatorKind::Aipw);
    }
    let mut report = SimulateReport {
        command: "simulate",
        config: args.run.clone(),
        settings: Vec::new(),
        failures: Vec::new(),
    };
    for (n, p) in settings(args) {
        let spec = DgpSpec::new(args.dgp, n, p).map_err(CliError::from)?;
        let mut cfg = StudyConfig::new(spec, args.reps, args.run.seed);
        cfg.estimators = estimators.clone();
        cfg.estimator = args.run.estimator_config();
        cfg.aipw = args.run.aipw_config();
        match run_study(&cfg) {
            Ok(reports) => report.settings.push(SimulationSetting {
                dgp: args.dgp,
                n,
                p,
                reps: args.reps,
                seed: args.run.seed,
                reports,
            }),
            Err(e) => report
                .failures
                .push(Failure::new(&format!("study n={n} p={p}"), &e.into())),
        }
    }
    Ok(report)
}
