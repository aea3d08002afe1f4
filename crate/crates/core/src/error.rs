use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeconvError {
    #[error("no data")]
    NoData,
    #[error("degenerate range")]
    DegenerateRange,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("operator has no rows: {cols} columns cannot carry a difference of order {order}")]
    OperatorHasNoRows { cols: usize, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density not normalized (mass {0})")]
    DensityNotNormalized(f64),
    #[error("theta out of range at index {index} (value {value})")]
    ThetaOutOfRange { index: usize, value: f64 },
    #[error("invalid intensity at bin {0}")]
    InvalidIntensity(usize),
    #[error("invalid target: non-finite entry at {0}")]
    InvalidTarget(usize),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("line search failed after {iterations} iterations")]
    LineSearchFailed { iterations: usize, best: Vec<f64> },
    #[error("ADMM diverged; reduce rho or tau")]
    AdmmDiverged,
    #[error("path failed: no entry converged")]
    PathFailed,
    #[error("AIC selection requires l1 path")]
    AicRequiresL1,
    #[error("held-out selection requires l2 penalty")]
    HeldoutRequiresL2,
    #[error("split too small")]
    SplitTooSmall,
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("unknown example id {0}; expected 1, 2, 3 or 4")]
    UnknownExample(u32),
    #[error("no grid points in interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DeconvError>;
