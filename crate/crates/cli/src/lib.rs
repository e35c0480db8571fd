//! Batch driver for singcond: one JSON config in, CSV tables and JSON reports out.

pub mod config;
pub mod plot;
pub mod run;

pub use config::RunConfig;
pub use run::{run, RunOptions, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] singcond::Error),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for configuration, 3 for numeric failures, 4 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}
