use std::io;

use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum SageError {
    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("node index {index} out of range for graph with {nodes} nodes")]
    NodeOutOfRange { index: usize, nodes: usize },

    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite output from primitive {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward requires a 1x1 output, got {0:?}")]
    NotScalar((usize, usize)),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("divergence at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown aggregator `{0}`")]
    UnknownAggregator(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SageError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SageError::NonFinite { .. } | SageError::Divergence { .. } | SageError::NotScalar(_) => {
                ErrorClass::Numerical
            }
            SageError::InvalidConfig(_)
            | SageError::UnknownAggregator(_)
            | SageError::Unsupported(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-parseable tag.
    pub fn tag(&self) -> &'static str {
        match self {
            SageError::UnknownNode(_) => "unknown_node",
            SageError::NodeOutOfRange { .. } => "node_out_of_range",
            SageError::LengthMismatch { .. } => "length_mismatch",
            SageError::NonFiniteFeature { .. } => "non_finite_feature",
            SageError::Parse { .. } => "parse",
            SageError::Format(_) => "format",
            SageError::ShapeMismatch { .. } => "shape_mismatch",
            SageError::NonFinite { .. } => "non_finite",
            SageError::NotScalar(_) => "not_scalar",
            SageError::LabelOutOfRange { .. } => "label_out_of_range",
            SageError::Divergence { .. } => "divergence",
            SageError::InvalidConfig(_) => "invalid_config",
            SageError::UnknownAggregator(_) => "unknown_aggregator",
            SageError::Unsupported(_) => "unsupported",
            SageError::Empty(_) => "empty_input",
            SageError::Io(_) => "io",
            SageError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = SageError> = std::result::Result<T, E>;
