use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum RocpError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called twice on the same tape")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite activation in layer `{0}`")]
    NonFiniteActivation(String),

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("calibration and test sets overlap at node {0}")]
    Overlap(usize),

    #[error("insufficient nodes: {0}")]
    InsufficientNodes(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("count mismatch for {what}: expected {expected}, found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} of node {node} outside [0, {classes})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<RocpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RocpError {
    /// Wraps the error with a human-readable location, e.g. a training cell.
    pub fn context(self, context: impl Into<String>) -> Self {
        RocpError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, RocpError>;
