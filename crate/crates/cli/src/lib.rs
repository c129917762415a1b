//! Command-line front end for the `matmed` library: CSV ingestion and
//! preprocessing, run configurations, manifests, and the commands that tie
//! them to the estimators.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod output;
pub mod preprocess;

pub use error::{CliError, CliResult};

/// Caps the global worker pool at `MATMED_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MATMED_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("MATMED_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} worker threads: {e}")))
}
