//! Command-line front end for `sdquant`: density ingestion, solver runs,
//! trace and result files, SVG rendering and the diagnostic suite.

pub mod commands;
pub mod config;
pub mod render;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{cmd_quantize, cmd_verify, ResultJson, SCHEMA_VERSION};
pub use config::{RunConfig, Solver};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// The solver failed; the result file has already been written.
    #[error("solver failed: {0}")]
    Solver(String),

    /// Some diagnostic checks failed.
    #[error("{0} diagnostic check(s) failed")]
    ChecksFailed(usize),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// `1` for configuration errors, `2` for solver or check failures, `3`
    /// for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) | CliError::ChecksFailed(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

/// Size the global thread pool from `QUANT_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("QUANT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| {
            CliError::Config(format!(
                "QUANT_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
