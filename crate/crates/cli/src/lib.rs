//! Experiment harness: dataset preparation, one-call training of every
//! method, evaluation reports and the scaled-down reproduction pipelines
//! behind the `hyvi` binary.

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::{DatasetSpec, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] hyvi_core::datasets::DataError),
    #[error("training diverged ({detail}); trace written to {}", trace.display())]
    NonFinite { detail: String, trace: PathBuf },
    #[error("{0}")]
    ArchMismatch(String),
    #[error("{0}")]
    Failed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 usage or data, 3 non-finite training, 4 architecture mismatch,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(_) => 2,
            CliError::NonFinite { .. } => 3,
            CliError::ArchMismatch(_) => 4,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<hyvi_core::evaluation::EvalError> for CliError {
    fn from(e: hyvi_core::evaluation::EvalError) -> Self {
        match e {
            hyvi_core::evaluation::EvalError::Usage(m) => CliError::Usage(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<hyvi_core::inference::InferenceError> for CliError {
    fn from(e: hyvi_core::inference::InferenceError) -> Self {
        match e {
            hyvi_core::inference::InferenceError::Config(m) => CliError::Usage(m),
            hyvi_core::inference::InferenceError::Data(d) => CliError::Data(d),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<hyvi_core::baselines::BaselineError> for CliError {
    fn from(e: hyvi_core::baselines::BaselineError) -> Self {
        match e {
            hyvi_core::baselines::BaselineError::Config(m) => CliError::Usage(m),
            hyvi_core::baselines::BaselineError::Inference(i) => i.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
