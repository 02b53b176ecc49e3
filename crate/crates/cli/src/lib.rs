//! Harness behind the `symdepth` binary: run configuration, batching and the
//! `augment`, `gradcheck`, `train`, `eval` and `synth` commands.

pub mod batch;
pub mod commands;
pub mod config;

use std::io;
use std::path::Path;

use thiserror::Error;

pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const DIVERGED: u8 = 2;
    pub const USAGE: u8 = 64;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] symdepth_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("check failed: {0}")]
    Check(String),

    #[error("diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Diverged { .. } => exit::DIVERGED,
            _ => exit::FAILURE,
        }
    }
}
