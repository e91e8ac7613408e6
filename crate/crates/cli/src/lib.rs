//! Experiment runner behind the `pulsefront` binary.

pub mod config;
pub mod output;
pub mod tasks;

use std::fmt;

pub use config::{ExperimentConfig, SpeedChoice, Task};
pub use output::{write_artifacts, Artifact, Outcome};
pub use tasks::{run, verify_all};

/// Failures surfaced to the shell: configuration (exit 2) or numerics (exit 1).
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config { path: String, message: String },
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Config { .. } | CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { path, message } if path.is_empty() => write!(f, "config error: {message}"),
            CliError::Config { path, message } => write!(f, "config error at `{path}`: {message}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pulsefront_core::Error> for CliError {
    fn from(e: pulsefront_core::Error) -> Self {
        use pulsefront_core::Error as E;
        match e {
            E::Config { path, message } => CliError::Config { path, message },
            E::InvalidParameter { name, reason } => CliError::Config {
                path: name,
                message: reason,
            },
            E::ZeroVector => CliError::config("direction", "direction vector is zero"),
            E::DimensionMismatch { expected, got } => {
                CliError::config("direction", format!("expected {expected} entries, got {got}"))
            }
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
