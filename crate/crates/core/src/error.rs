//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("order grids differ between composed curves")]
    GridMismatch,

    #[error("infeasible budget: semantic query alone costs epsilon {query_epsilon:.6} >= target {target:.6}")]
    InfeasibleBudget { query_epsilon: f64, target: f64 },

    #[error("calibration did not converge: {0}")]
    NonConvergence(String),

    #[error("privacy budget exhausted: projected epsilon {projected:.6} > target {target:.6}")]
    BudgetExceeded { projected: f64, target: f64 },

    #[error("semantic distribution was already released")]
    AlreadyReleased,

    #[error("a semantic-distribution query was already charged to this ledger")]
    DuplicateQueryCharge,

    #[error("operation requires a noisy release; raw counts are only usable in testing mode")]
    RawDistribution,

    #[error("unknown label {0}")]
    UnknownLabel(String),

    #[error("unsupported loss tag `{0}`")]
    UnsupportedLoss(String),

    #[error("wrong model kind: expected {expected}")]
    WrongModelKind { expected: &'static str },

    #[error("overlapping partition: record {0} appears in more than one category")]
    OverlappingPartition(usize),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
