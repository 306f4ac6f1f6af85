use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid turn: {0}")]
    InvalidTurn(String),

    #[error("invalid dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },

    #[error("task {task}: {reason}")]
    InvalidTask { task: String, reason: String },

    #[error("duplicate task name {0}")]
    DuplicateTask(String),

    #[error("unknown task {0}")]
    UnknownTask(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("fixed segments exceed budget ({fixed} tokens > budget {budget})")]
    FixedSegmentsExceedBudget { fixed: usize, budget: usize },

    #[error("augmentation error: {0}")]
    Augment(String),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
