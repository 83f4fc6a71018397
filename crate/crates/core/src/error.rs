use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error("grounding failed: {0}")]
    Grounding(String),
    #[error("graph has {assignments} joint assignments, enumeration limit is {limit}")]
    GraphTooLarge { assignments: f64, limit: usize },
    #[error("at-least-one factor over an empty tuple")]
    EmptyTuple,
    #[error("weight for template {template} diverged to {weight}")]
    Divergence { template: usize, weight: f64 },
    #[error("training produced a non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("query budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("no candidate features left to query")]
    PoolExhausted,
    #[error("unknown query {0}")]
    UnknownQuery(usize),
    #[error("query {0} was already answered")]
    AlreadyAnswered(usize),
    #[error("session is not awaiting an answer")]
    NotAwaiting,
    #[error("session is waiting for an answer to query {0}")]
    AwaitingAnswer(usize),
    #[error("belief states cover different instances")]
    MismatchedBeliefs,
    #[error("replay diverged from the recorded log at event {0}")]
    ReplayDiverged(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error comes from bad input data rather than configuration
    /// or a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Load { .. }
                | Error::DuplicateId(_)
                | Error::UnknownLabel(_)
                | Error::Data(_)
                | Error::Grounding(_)
                | Error::Io { .. }
                | Error::Json(_)
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
