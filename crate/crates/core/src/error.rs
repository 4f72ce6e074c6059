use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("invalid timings: {0}")]
    Timing(String),

    #[error("invalid utterance {id}: {message}")]
    InvalidUtterance { id: String, message: String },

    #[error("split sizes {sizes:?} sum to {sum}, but the corpus has {count} utterances")]
    SplitSize {
        sizes: (usize, usize, usize),
        sum: usize,
        count: usize,
    },

    #[error("annotation failed for {id}: {message}")]
    Annotation { id: String, message: String },

    #[error("subwords {subwords:?} do not reconstruct tokens {tokens:?}")]
    Alignment { tokens: String, subwords: String },

    #[error("sequence of {len} positions exceeds the encoder limit of {max}")]
    Overlength { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
