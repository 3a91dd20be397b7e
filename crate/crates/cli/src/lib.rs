//! Configuration, seeded runs and reports for the `dualhash` binary.

pub mod compare;
pub mod config;
pub mod experiment;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, Method};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] dualhash_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(dualhash_core::Error::InvalidParameter { .. }) => 2,
            CliError::Core(dualhash_core::Error::Diverged { .. }) => 3,
            _ => 1,
        }
    }
}
