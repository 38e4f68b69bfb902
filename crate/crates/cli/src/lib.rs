//! Command implementations behind the `agent6g` binary.
//!
//! Exit codes: 0 success, 1 constraints failed, 2 usage or I/O error,
//! 3 duplicate document, 4 request rejected, 5 all planners failed.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use agent6g_core::knowledge::KnowledgeError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONSTRAINTS: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DUPLICATE: u8 = 3;
pub const EXIT_REJECTED: u8 = 4;
pub const EXIT_ALL_FAILED: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("all planners failed")]
    AllPlannersFailed,
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Knowledge(KnowledgeError::DuplicateDocument(_)) => EXIT_DUPLICATE,
            CliError::Rejected(_) => EXIT_REJECTED,
            CliError::AllPlannersFailed => EXIT_ALL_FAILED,
            _ => EXIT_USAGE,
        }
    }
}
