//! Experiment runner: simulation, estimation batches, efficiency checks and
//! solver benchmarks driven by one TOML file.

pub mod bench;
pub mod config;
pub mod output;
pub mod run;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}
