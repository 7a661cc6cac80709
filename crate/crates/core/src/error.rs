use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: String, expected: String, found: String },

    #[error("malformed dataset header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload { path: PathBuf, expected: u64, found: u64 },

    #[error("mutual coherence needs at least two columns, got {0}")]
    CoherenceUndefined(usize),

    #[error("dictionary solver diverged: step size halved {halvings} times at iteration {iteration}")]
    DictionaryDiverged { iteration: usize, halvings: usize },

    #[error("non-finite iterate at layer {layer} (theta={theta}, gamma={gamma}, beta={beta}, p={p})")]
    NonFinite { layer: usize, theta: f64, gamma: f64, beta: f64, p: usize },

    #[error("ground truth is the zero vector")]
    ZeroSignal,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code, used by the CLI and by callers that need to
    /// distinguish load failures without matching on messages.
    pub fn code(&self) -> u16 {
        match self {
            Error::InvalidConfig(_) => 10,
            Error::DimensionMismatch { .. } => 11,
            Error::MalformedHeader { .. } => 12,
            Error::TruncatedPayload { .. } => 13,
            Error::CoherenceUndefined(_) => 20,
            Error::DictionaryDiverged { .. } => 21,
            Error::NonFinite { .. } => 30,
            Error::ZeroSignal => 31,
            Error::Empty(_) => 32,
            Error::Io(_) => 40,
            Error::Json(_) => 41,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch { what: what.into(), expected: expected.to_string(), found: found.to_string() }
    }
}
