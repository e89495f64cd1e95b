//! Error type carrying the stable exit-code contract: 0 success, 2 config
//! or precondition, 3 bound violation on a certified run, 4 numeric
//! failure.

use std::path::PathBuf;
use thiserror::Error;

use dfl_core::datagen::DatagenError;
use dfl_core::engine::EngineError;
use dfl_core::losses::LossError;
use dfl_core::metrics::MetricsError;
use dfl_core::theory::TheoryError;
use dfl_core::topology::TopologyError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A certified run broke a theoretical bound: the theory and the
    /// implementation disagree, which is never a user error.
    #[error("{0}")]
    BoundViolation(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::BoundViolation(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::NumericOverflow { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}
