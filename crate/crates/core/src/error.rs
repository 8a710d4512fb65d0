use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OridError {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("organ {organ}: expected {expected} mask channels, got {actual}")]
    MaskChannels { organ: &'static str, expected: usize, actual: usize },

    #[error("image resolution mismatch: expected {expected:?} (HxWxC), got {actual:?}")]
    Resolution { expected: (usize, usize, usize), actual: (usize, usize, usize) },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("target sequence must begin with BOS")]
    MissingBos,

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("ds-graph: {0}")]
    DsGraph(String),

    #[error("invalid toggle combination: {0}")]
    Toggles(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("array file {path}: {msg}")]
    ArrayFormat { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = OridError> = std::result::Result<T, E>;
