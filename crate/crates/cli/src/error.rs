use std::path::PathBuf;

use isslstm::data::DataError;
use isslstm::iss::IssError;
use isslstm::lstm::LstmError;
use isslstm::thermal::ThermalError;
use isslstm::training::TrainError;
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const NO_STABLE_CHECKPOINT: i32 = 3;
    pub const ASSERTION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("no stable checkpoint after {checks} validation checks; history written to {history}")]
    NoStableCheckpoint { checks: usize, history: PathBuf },
    #[error("{0}")]
    Assertion(String),
    #[error(transparent)]
    Data(DataError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Iss(#[from] IssError),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Parse { path, line, msg } => CliError::Parse { path, msg: format!("line {line}: {msg}") },
            other => CliError::Data(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) => exit::PARSE,
            CliError::Data(DataError::Io { .. }) | CliError::Io { .. } => exit::IO,
            CliError::Data(_) => exit::PARSE,
            CliError::NoStableCheckpoint { .. } => exit::NO_STABLE_CHECKPOINT,
            CliError::Train(TrainError::NoStableCheckpoint { .. }) => exit::NO_STABLE_CHECKPOINT,
            CliError::Assertion(_) => exit::ASSERTION,
            CliError::Thermal(ThermalError::Data(DataError::Io { .. })) => exit::IO,
            CliError::Thermal(_) | CliError::Train(_) | CliError::Lstm(_) | CliError::Iss(_) => exit::PARSE,
        }
    }
}
