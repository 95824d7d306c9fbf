use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {system} code {input:?}: expected {pattern}")]
    Format {
        system: &'static str,
        pattern: &'static str,
        input: String,
    },

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("truncated or corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("history {patient_id} is not attributable to this generator: {reason}")]
    NotAttributable { patient_id: String, reason: String },

    #[error("no other {kind} token to compare against {token}")]
    NoCandidate { kind: String, token: String },

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("model/featurizer mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
