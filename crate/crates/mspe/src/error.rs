//! Error types shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension disagreement between operands of a numeric operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ratio assignment does not cover layer {layer}, head {head}")]
    AssignmentCoverage { layer: usize, head: usize },

    #[error("incomplete attention snapshot: missing layer {layer}, head {head}")]
    IncompleteSnapshot { layer: usize, head: usize },

    #[error("token id {token} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { token: u32, vocab_size: usize },

    #[error("sequence length {requested} exceeds maximum {max}")]
    SequenceTooLong { requested: usize, max: usize },

    #[error("weight file: bad magic (expected \"MSPE\")")]
    BadMagic,

    #[error("weight file: unsupported version {0}")]
    BadVersion(u32),

    #[error("weight file: truncated or corrupt ({0})")]
    Truncated(String),

    #[error("weight file: missing tensor {0:?}")]
    MissingTensor(String),

    #[error("weight file: unexpected tensor {0:?}")]
    UnexpectedTensor(String),

    #[error("tensor {name:?}: expected shape {expected}, found {found}")]
    TensorShape {
        name: String,
        expected: String,
        found: String,
    },

    #[error("tensor {0:?} contains non-finite values")]
    NonFinite(String),

    #[error("vocabulary too small: {0}")]
    VocabTooSmall(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
