use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line tool. Each maps to an exit code and
/// a short category printed in the JSON error report.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error(transparent)]
    Model(#[from] matmed::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Parse { .. } => "parse",
            CliError::Input { .. } => "input",
            CliError::ReplayMismatch(_) => "replay-mismatch",
            CliError::Model(e) => e.category(),
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    /// 2 for invalid invocations or configurations, 1 for everything that
    /// fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Config(_)
            | CliError::Model(matmed::Error::Config(_) | matmed::Error::Dimension(_)) => 2,
            _ => 1,
        }
    }

    pub fn report_json(&self) -> String {
        serde_json::json!({
            "error": self.category(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
