use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("shape has no vertices")]
    EmptyShape,
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mask selects no complete face")]
    EmptySubmesh,
    #[error("every vertex is on the boundary")]
    AllBoundary,
    #[error("dirichlet spectrum requested on a shape without boundary")]
    NoBoundary,
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("offset {index} is negative ({value})")]
    NegativeOffset { index: usize, value: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("pair sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("unsupported format version: {0}")]
    VersionMismatch(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("training diverged at epoch {0}")]
    DivergenceDetected(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] spun_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidArgument(msg.into())
}
