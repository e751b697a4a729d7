use thiserror::Error;

pub type Result<T> = std::result::Result<T, TdcError>;

#[derive(Debug, Error)]
pub enum TdcError {
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index} is below threshold {threshold:e}")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    /// The pooled SSP matrix of a configuration is singular. Carries the
    /// offending configuration as 0-based retained indices and labels.
    #[error("singular pooled SSP matrix for configuration with {} retained observations", retained.len())]
    SingularSsp {
        retained: Vec<usize>,
        labels: Vec<usize>,
    },

    #[error("instance too large: {count} exceeds limit {limit}")]
    InstanceTooLarge { count: f64, limit: f64 },

    #[error("initialization failed after {attempts} attempts")]
    InitFailed { attempts: usize },

    #[error("all {starts} starts failed")]
    AllStartsFailed { starts: usize },

    #[error("configuration is not a fixed point of the reduction step (worst violation {worst_violation:e})")]
    NotAFixedPoint { worst_violation: f64 },

    #[error("no feasible configuration: every candidate has a singular SSP matrix")]
    NoFeasibleConfiguration,

    #[error("length mismatch: {left} estimated vs {right} reference populations")]
    LengthMismatch { left: usize, right: usize },

    #[error("shell outlier placement failed for cluster {cluster} after {tries} tries")]
    ShellPlacementFailed { cluster: usize, tries: usize },

    #[error("replacement breaks general position (subset {subset:?})")]
    GeneralPositionViolated { subset: Vec<usize> },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
