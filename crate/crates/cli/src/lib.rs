//! Library behind the `mage` binary. Every subcommand is a plain function
//! over a resolved [`config::RunConfig`], so integration tests can drive the
//! full pipeline — dataset synthesis, two-stage training, generation,
//! evaluation, attention export — without shelling out.

pub mod commands;
pub mod config;
pub mod media;

use std::fmt;

/// Errors split by exit code: bad input (1) versus failed work (2).
#[derive(Debug)]
pub enum CliError {
    /// Unusable flags, config file, or preconditions caught before any real
    /// work starts.
    Usage(String),
    /// Failures while executing: I/O, corrupt artifacts, numerical trouble.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Shorthand constructors for `map_err` chains.
pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
