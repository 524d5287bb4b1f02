use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Estimation(#[from] balquant::Error),

    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for bad input, 2 for a numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Estimation(e) if !e.is_input_error() => 2,
            CliError::Json(_) => 2,
            _ => 1,
        }
    }

    pub fn stage(&self) -> Option<String> {
        match self {
            CliError::Estimation(e) => e.stage().map(|s| s.to_string()),
            _ => None,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
