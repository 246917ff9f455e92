use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid domain: requires a < b, got [{a}, {b}]")]
    InvalidDomain { a: f64, b: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("need at least {need} signals, got {got}")]
    TooFewSignals { need: usize, got: usize },

    #[error("asymmetric surface")]
    AsymmetricSurface,

    #[error("degenerate covariance")]
    DegenerateCovariance,

    #[error("ill-conditioned kernel")]
    IllConditionedKernel,

    #[error("stream absent for unit: unit {unit}, stream {stream}")]
    StreamAbsent { unit: String, stream: String },

    #[error("unknown unit: {0}")]
    UnknownUnit(String),

    #[error("posterior variance underflow: component {component}, value {value}")]
    PosteriorVarianceUnderflow { component: usize, value: f64 },

    #[error("degenerate prior: component {component} has variance {variance}")]
    DegeneratePrior { component: usize, variance: f64 },

    #[error("no feasible polynomial degree")]
    NoFeasibleDegree,

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too many failed repetitions: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
