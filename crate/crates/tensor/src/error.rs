use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("unknown operator `{0}`")]
    UnknownOperator(String),

    #[error("{op}: missing or invalid attribute `{key}`")]
    BadAttribute { op: String, key: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("cycle detected: node {node} depends on node {input}")]
    CycleDetected { node: usize, input: usize },

    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity { op: String, expected: String, got: usize },
}

impl TensorError {
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }
}
