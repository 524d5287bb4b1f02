use std::path::PathBuf;
use std::process::ExitCode;

use balquant::DgpKind;
use balquant_cli::{
    cmd_contrast, cmd_estimate, cmd_simulate, CliError, ErrorReport, EstimateArgs, EstimatorChoice, Failure,
    IngestOptions, Report, RunConfig, SimulateArgs,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "balquant",
    version,
    about = "Debiased marginal quantile estimation with missing responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the marginal quantile of a response column.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Difference of marginal quantiles between two groups.
    Contrast {
        #[command(flatten)]
        input: InputArgs,
        /// Column holding the two group labels.
        #[arg(long)]
        group: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo study on a simulation design.
    Simulate {
        /// Design: 1 (misspecified selection model) or 2.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        dgp: u8,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        p: usize,
        #[arg(long, default_value_t = 300)]
        reps: usize,
        /// Run n in {200, 400} with p in {n/4, n/2}.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct InputArgs {
    /// CSV file with a header row.
    path: PathBuf,
    /// Response column.
    #[arg(long)]
    response: String,
    /// Cell text marking a missing response (empty cells always do).
    #[arg(long, default_value = "")]
    missing_token: String,
    /// Columns to ignore.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial constant of the balance tolerance schedule.
    #[arg(long, default_value_t = 0.10)]
    c0: f64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Explicit comma-separated lasso penalty grid.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Add all pairwise products and squares of the covariates.
    #[arg(long)]
    expand_interactions: bool,
    /// Fit on the standardized response and map results back.
    #[arg(long)]
    standardize_response: bool,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Proposed)]
    estimator: EstimatorChoice,
    /// Emit the structured JSON report.
    #[arg(long)]
    json: bool,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            tau_level: self.tau,
            alpha: self.alpha,
            seed: self.seed,
            c0: self.c0,
            lambda_grid: self.lambda_grid.clone(),
            cv_folds: self.folds,
            standardize_response: self.standardize_response,
            expand_interactions: self.expand_interactions,
            estimator: self.estimator,
        }
    }
}

fn ingest_options(input: &InputArgs, group: Option<String>) -> IngestOptions {
    IngestOptions {
        missing_token: input.missing_token.clone(),
        group_column: group,
        exclude: input.exclude.clone(),
        ..IngestOptions::new(input.response.clone())
    }
}

fn emit<R: Report>(report: &R, json: bool) -> Result<i32, CliError> {
    if json {
        println!("{}", report.render_json()?);
    } else {
        print!("{}", report.render_text());
    }
    Ok(report.exit_code())
}

fn run(cli: Cli) -> (&'static str, bool, Result<i32, CliError>) {
    match cli.command {
        Command::Estimate { input, run } => {
            let args = EstimateArgs {
                path: input.path.clone(),
                ingest: ingest_options(&input, None),
                run: run.config(),
            };
            (
                "estimate",
                run.json,
                cmd_estimate(&args).and_then(|r| emit(&r, run.json)),
            )
        }
        Command::Contrast { input, group, run } => {
            let args = EstimateArgs {
                path: input.path.clone(),
                ingest: ingest_options(&input, Some(group)),
                run: run.config(),
            };
            (
                "contrast",
                run.json,
                cmd_contrast(&args).and_then(|r| emit(&r, run.json)),
            )
        }
        Command::Simulate {
            dgp,
            n,
            p,
            reps,
            grid,
            run,
        } => {
            let args = SimulateArgs {
                dgp: if dgp == 1 { DgpKind::Dgp1 } else { DgpKind::Dgp2 },
                n,
                p,
                reps,
                grid,
                run: run.config(),
            };
            (
                "simulate",
                run.json,
                cmd_simulate(&args).and_then(|r| emit(&r, run.json)),
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, json, result) = run(cli);
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            let report = ErrorReport {
                command: command.to_string(),
                error: Failure::new(command, &err),
            };
            if json {
                if let Ok(s) = report.render_json() {
                    println!("{s}");
                }
            }
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
