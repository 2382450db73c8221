//! Experiment driver for `gradual-core`: configuration files, output layout,
//! subcommands and the acceptance suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod output;

use gradual_core::ErrorClass;

pub use commands::Command;
pub use config::ExperimentConfig;
pub use output::RunDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gradual_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{failed} acceptance criteria failed")]
    AcceptanceFailed { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numeric => 3,
            },
            CliError::AcceptanceFailed { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
