//! Batch runs of the estimator and integrity monitor: configuration,
//! output files, replay of scenario dumps and run comparison.

pub mod commands;
pub mod config;
pub mod output;
pub mod protocol;

use givint_core::{PipelineError, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
    #[error("scenario dump: {0}")]
    Schema(String),
    #[error("runs cover different epochs: {0}")]
    EpochMismatch(String),
    #[error("observability: {0}")]
    Observability(String),
    #[error("continuity alert raised at {0} epochs")]
    ContinuityAlert(usize),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Internal(_) => 1,
            CliError::Config(_) | CliError::Schema(_) | CliError::EpochMismatch(_) => 2,
            CliError::Observability(_) => 3,
            CliError::ContinuityAlert(_) => 4,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(m) => CliError::Io(m),
            ScenarioError::Schema(m) => CliError::Schema(m),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => CliError::Config(m),
            e @ PipelineError::Observability { .. } => CliError::Observability(e.to_string()),
            e => CliError::Internal(e.to_string()),
        }
    }
}
