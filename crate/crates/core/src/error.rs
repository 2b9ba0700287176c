use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("document {doc_id}: {field} has {found} values, expected {expected}")]
    LengthMismatch {
        doc_id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("document {doc_id}: {field} at offset {offset} is {value} (must be finite and non-negative)")]
    BadSignalValue {
        doc_id: String,
        field: &'static str,
        offset: usize,
        value: f64,
    },

    #[error("document {0}: empty byte sequence")]
    EmptyDocument(String),

    #[error("duplicate document id {0}")]
    DuplicateDocument(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary file: {0}")]
    VocabFormat(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unknown token id {0}")]
    UnknownId(u32),

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
