//! Front end for the `riccati` binary: configuration parsing, the four
//! commands, and human-readable output.

pub mod commands;
pub mod config;
pub mod format;

use std::path::Path;

use thiserror::Error;

pub use config::{load_config, parse_config, resolve_p0, BasisSpec, ProblemConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] riccati_core::Error),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("{0} validation check(s) failed")]
    ValidationFailed(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 success, 1 validation or assumption failure, 2 parse or I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Io { .. } => 2,
            Self::Core(riccati_core::Error::TableFormat { .. }) => 2,
            Self::Core(_) | Self::Assumption(_) | Self::ValidationFailed(_) => 1,
        }
    }
}
