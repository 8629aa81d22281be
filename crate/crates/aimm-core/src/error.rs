//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shape disagreement.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Word not present in the fixed vocabulary.
    #[error("vocabulary error: unknown word {word:?}")]
    Vocabulary { word: String },

    /// Batch too small or otherwise unusable.
    #[error("batch error: {0}")]
    Batch(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents; `offset` is the byte offset of the problem.
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    /// A generated sample has zero propagation paths.
    #[error("outage: sample has no propagation paths")]
    Outage,

    /// Evaluation over an empty or unusable sample set.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A required artifact from an earlier pipeline stage is missing.
    #[error("dependency error: missing output of stage {stage:?} ({detail})")]
    Dependency { stage: String, detail: String },

    /// Checkpoint contents inconsistent with the requested model topology.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    ///
    /// 2 = config error, 3 = data/format error, 4 = dependency error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Vocabulary { .. } | Error::Batch(_) => 2,
            Error::Format { .. }
            | Error::Outage
            | Error::Evaluation(_)
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Dependency { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
