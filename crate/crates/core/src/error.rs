use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no block with f = {0}/2 in this Hilbert space")]
    UnknownBlock(u32),

    #[error("operator is not Hermitian (max |H - H^dagger| = {0:e})")]
    NotHermitian(f64),

    #[error("measurement record is empty")]
    EmptyRecord,

    #[error("epsilon {epsilon:e} is below the smallest attainable residual {min_residual:e}")]
    InfeasibleEpsilon { epsilon: f64, min_residual: f64 },

    #[error("epsilon {epsilon:e} admits the zero matrix (|M|^2 = {record_norm_sq:e}); cannot renormalize")]
    ZeroState { epsilon: f64, record_norm_sq: f64 },

    #[error("exponential fit failed: {0}")]
    FitFailure(String),

    #[error("epsilon calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("time grids differ between curve sets")]
    GridMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::UnknownBlock(_) => "unknown-block",
            Error::NotHermitian(_) => "not-hermitian",
            Error::EmptyRecord => "empty-record",
            Error::InfeasibleEpsilon { .. } => "infeasible-epsilon",
            Error::ZeroState { .. } => "zero-state",
            Error::FitFailure(_) => "fit-failure",
            Error::CalibrationFailed(_) => "calibration-failed",
            Error::GridMismatch => "grid-mismatch",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
