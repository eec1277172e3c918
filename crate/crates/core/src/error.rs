use thiserror::Error;

#[derive(Debug, Error)]
pub enum FbtsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action {action} out of range for {count} actions")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("empty sample set for {0}")]
    EmptySamples(&'static str),
    #[error("absorbing rollout exceeded {0} steps")]
    NonTermination(u64),
    #[error("linear program failed: {0}")]
    Solver(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no exact oracle: {0}")]
    NoOracle(String),
    #[error("task {index} failed: {source}")]
    Task {
        index: usize,
        #[source]
        source: Box<FbtsError>,
    },
    #[error("iteration {k}: {source}")]
    Iteration {
        k: usize,
        #[source]
        source: Box<FbtsError>,
    },
    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: String, reason: String },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FbtsError>;

impl FbtsError {
    /// The innermost error beneath task and iteration context.
    pub fn root_cause(&self) -> &FbtsError {
        match self {
            FbtsError::Task { source, .. } | FbtsError::Iteration { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> FbtsError {
    FbtsError::InvalidParameter(msg.into())
}
