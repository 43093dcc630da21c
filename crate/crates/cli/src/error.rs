//! Command errors and their process exit codes.

use colo_core::ColoError;
use thiserror::Error;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_REFUSED: i32 = 5;
pub const EXIT_CHECK_FAILED: i32 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("refusing to overwrite {0} (pass --force to replace it)")]
    Refused(String),

    #[error("{0} gradient check(s) failed: {1}")]
    ChecksFailed(usize, String),

    #[error(transparent)]
    Core(#[from] ColoError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Json(_) => EXIT_DATA,
            CliError::Refused(_) => EXIT_REFUSED,
            CliError::ChecksFailed(..) => EXIT_CHECK_FAILED,
            CliError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_DATA,
            CliError::Io(_) => EXIT_OTHER,
            CliError::Core(e) => match e {
                ColoError::Config(_) => EXIT_CONFIG,
                ColoError::NumericAbort { .. } | ColoError::NonFinite { .. } | ColoError::InvalidLoss(_) => EXIT_NUMERIC,
                ColoError::Parse { .. }
                | ColoError::Lexicon(_)
                | ColoError::Capacity(_)
                | ColoError::Alignment { .. }
                | ColoError::Checkpoint(_)
                | ColoError::MissingParameter(_)
                | ColoError::Vocabulary { .. }
                | ColoError::Length { .. }
                | ColoError::Json(_) => EXIT_DATA,
                ColoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_DATA,
                _ => EXIT_OTHER,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
