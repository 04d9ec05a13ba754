//! Library half of the `hbnn` command-line tool: configuration, the
//! bundled dataset generator, CSV and JSON artifacts, and the command
//! implementations. The binary in `main.rs` is a thin argument-parsing
//! shell over this.

pub mod commands;
pub mod config;
pub mod dataset;

use thiserror::Error;

/// CLI failures, split by exit code: configuration problems exit with 2,
/// numerical failures with 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}
