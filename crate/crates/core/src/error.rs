use std::path::PathBuf;

use thiserror::Error;

use crate::domain::{BagId, InstanceId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("all class counts are zero")]
    EmptyBag,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid proportion: {0}")]
    InvalidProportion(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("bag {bag} has no prediction for instance {instance}")]
    IncompletePrediction { bag: BagId, instance: InstanceId },

    #[error("training diverged at epoch {epoch}{}", iteration.map(|i| format!(" (pipeline iteration {i})")).unwrap_or_default())]
    TrainingDiverged {
        epoch: usize,
        iteration: Option<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidLabel(_) => 2,
            Error::TrainingDiverged { .. } => 4,
            _ => 3,
        }
    }

    /// Attaches the outer pipeline iteration to a divergence error.
    pub(crate) fn in_iteration(self, iteration: usize) -> Self {
        match self {
            Error::TrainingDiverged { epoch, .. } => Error::TrainingDiverged {
                epoch,
                iteration: Some(iteration),
            },
            other => other,
        }
    }
}
