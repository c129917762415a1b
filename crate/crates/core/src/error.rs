use thiserror::Error;

/// Errors produced by the modelling, sampling and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("sampler diverged at iteration {iteration}: {message}")]
    NonFinite { iteration: usize, message: String },

    #[error("perfect separation detected: {0}")]
    Separation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI for error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::NonFinite { .. } => "non-finite",
            Error::Separation(_) => "separation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
