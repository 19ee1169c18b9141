use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logits at index {index}")]
    NonFiniteLogits { index: usize },

    #[error("empty logits vector")]
    EmptyLogits,

    #[error("codebook count mismatch: expected {expected}, found {found}")]
    CodebookMismatch { expected: usize, found: usize },

    #[error("token {token} out of range for codebook {codebook} (size {size})")]
    TokenOutOfRange { codebook: usize, token: u32, size: u32 },

    #[error("trace exhausted: step {step} requested, trace has {len} steps")]
    TraceExhausted { step: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("candidate limit exceeded: {candidates} candidates per step (limit {limit})")]
    CandidateLimit { candidates: usize, limit: usize },

    #[error("decode failed at step {step}, beam {beam}: {source}")]
    Decode {
        step: usize,
        beam: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("no token left with positive probability")]
    EmptySupport,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    pub(crate) fn at(self, step: usize, beam: usize) -> Self {
        Error::Decode { step, beam, source: Box::new(self) }
    }

    /// True for errors caused by bad user input rather than a failing decode.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_)
        )
    }
}
