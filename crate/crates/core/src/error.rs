use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not Hermitian: entry ({row}, {col}) deviates from its conjugate by {deviation:e}")]
    NotHermitian { row: usize, col: usize, deviation: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("bandwidth m = {m} too large for n = {n} (need m < n/2)")]
    BandwidthTooLarge { m: usize, n: usize },
    #[error("bandwidth m = {m} too small for r = {r} series")]
    BandwidthTooSmall { m: usize, r: usize },
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("non-positive eigenvalue {0:e} in relative spectrum")]
    NonPositiveEigenvalue(f64),
    #[error("invalid discrepancy parameter: {0}")]
    InvalidDiscrepancy(String),
    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),
    #[error("sample second-moment matrix is singular")]
    SingularCovariance,
    #[error("covariance selection did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("spectral sequences are not aligned: {0}")]
    AlignmentMismatch(String),
    #[error("degenerate variance sigma^2 = {0}")]
    DegenerateVariance(f64),
    #[error("block statistic needs at least one block (n = {n}, m = {m})")]
    NoBlocks { n: usize, m: usize },
    #[error("process is not stationary: spectral radius {0} >= 1")]
    NonStationary(f64),
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },
    #[error("ragged rows: data row {row} has {found} of {expected} values")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("non-numeric value '{value}' at data row {row}, column {column}")]
    NonNumeric { row: usize, column: usize, value: String },
    #[error("input too short: {n} data rows, need at least {min}")]
    TooShort { n: usize, min: usize },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
