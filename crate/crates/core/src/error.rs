use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty loss: every target position is ignored")]
    EmptyLoss,
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    Vocabulary { id: u32, vocab_size: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("graft error: {0}")]
    Graft(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
