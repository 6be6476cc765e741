use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the optimisation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An invalid configuration value. `field` names the offending setting.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Input data that violates a shape or content constraint.
    #[error("data error: {0}")]
    Data(String),

    /// The objective (or external model) failed to produce a fitness value.
    #[error("evaluation failed: {0}")]
    Eval(String),

    #[error(transparent)]
    Endpoint(#[from] crate::extmodel::EndpointError),

    /// Surrogate training produced non-finite values.
    #[error("surrogate training failed: {0}")]
    Train(String),

    /// A precondition of an operation did not hold (e.g. predicting with an untrained model).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A swarm worker failed; the run was aborted.
    #[error("swarm {swarm} failed: {source}")]
    Worker {
        swarm: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
