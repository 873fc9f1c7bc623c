use thiserror::Error;

/// Errors raised by the reservoir computing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("{chunks} chunks do not divide data dimension {data_dim}")]
    IndivisibleChunks { data_dim: usize, chunks: usize },
    #[error("locality {locality} too large for chunk size {chunk_size} and data dimension {data_dim}")]
    LocalityTooLarge {
        data_dim: usize,
        chunk_size: usize,
        locality: usize,
    },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("linear system is singular (beta = 0 and X^T X rank deficient)")]
    SingularSystem,
    #[error("sequence too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("forecast diverged to non-finite values at step {step}")]
    NonFiniteState { step: usize },
    #[error("ODE solver diverged at t = {t}")]
    SolverDiverged { t: f64 },
    #[error("time {t} outside interpolant range [{start}, {end}]")]
    InterpolantOutOfRange { t: f64, start: f64, end: f64 },
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint checksum mismatch")]
    CorruptChecksum,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}
