use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document; `path` is a JSON path such as `data[0].paragraphs[2].qas[1].id`.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("integrity error in record {id}: {message}")]
    Integrity { id: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("answer span does not overlap any input token: {0}")]
    Alignment(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}, step {step}: {message} (batch dumped to {dump:?})")]
    Divergence { epoch: usize, step: usize, message: String, dump: Option<PathBuf> },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("missing ids: {0:?}")]
    MissingIds(Vec<String>),

    #[error("NER provider failure: {0}")]
    Ner(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
