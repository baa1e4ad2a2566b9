use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvfError {
    #[error("shape mismatch in {op} (node {node}): {detail}")]
    Shape {
        op: &'static str,
        node: usize,
        detail: String,
    },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("unbound graph input `{0}`")]
    UnboundInput(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvfError>;

pub(crate) fn invalid(msg: impl Into<String>) -> EvfError {
    EvfError::Invalid(msg.into())
}
