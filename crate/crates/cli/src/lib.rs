//! Batch front-end for the `cev-fb` solver: configuration parsing and the `price`,
//! `converge`, `sweep` and `boundary` commands.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_boundary, cmd_converge, cmd_price, cmd_sweep};
pub use config::{parse, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical error: {0}")]
    Numerical(#[from] cev_fb::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
