use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_INPUT: u8 = 3;
    pub const SCHEMA: u8 = 4;
    pub const STAGE: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: schema mismatch, expected {expected}, found {found}", path.display())]
    Schema { path: PathBuf, expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Stage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) => exit::MISSING_INPUT,
            CliError::Schema { .. } => exit::SCHEMA,
            CliError::Config(_) => exit::USAGE,
            CliError::Stage(_) => exit::STAGE,
            CliError::Io { .. } | CliError::Parse { .. } => exit::OTHER,
        }
    }
}

pub fn stage<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Stage(format!("{context}: {e}"))
}
