//! Command-line front end: CSV ingestion, interaction expansion, estimation,
//! two-group contrasts and simulation studies with text or JSON reports.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;

pub use commands::{cmd_contrast, cmd_estimate, cmd_simulate, EstimateArgs, SimulateArgs};
pub use config::{EstimatorChoice, RunConfig};
pub use error::{CliError, Result};
pub use ingest::{build_groups, expand_interactions, ingest_csv, read_table, write_csv, GroupData, IngestOptions};
pub use report::{ErrorReport, Failure, Report};
