use std::path::PathBuf;

/// Errors produced anywhere in the selection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference signal has zero energy")]
    ZeroReference,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("audio file {path}: {detail}")]
    Audio { path: PathBuf, detail: String },

    #[error("clip {clip}: needs {needed} samples from offset {offset}, only {available} available; re-sample the clip offset")]
    ClipTooShort {
        clip: String,
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("non-finite loss for examples {ids:?}")]
    NonFiniteLoss { ids: Vec<String> },

    #[error("permutation search supports at most {max} outputs, got {got}")]
    UnsupportedOutputCount { got: usize, max: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
