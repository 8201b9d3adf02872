use std::io;

use she_core::SheError;
use thiserror::Error;

use crate::manifest::ValidationError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("manifest has {} schema violation(s)", .0.len())]
    Schema(Vec<ValidationError>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] SheError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file}: manifest hash {left} differs from {right}; refusing to compare")]
    HashMismatch { file: String, left: String, right: String },
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl CliError {
    /// 0 success, 1 numeric failure, 2 schema or usage error, 3 acceptance failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Usage(_) | CliError::Json(_) | CliError::HashMismatch { .. } => 2,
            CliError::Core(SheError::InvalidArgument(_) | SheError::Domain(_)) => 2,
            CliError::Core(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Acceptance(_) => 3,
        }
    }
}
