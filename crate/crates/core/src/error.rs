use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid modulation order {0}: must be a perfect square >= 4")]
    InvalidOrder(u32),
    #[error("invalid power {0}: must be finite and > 0")]
    InvalidPower(f64),
    #[error("non-finite sample at index {index}")]
    InvalidSample { index: usize },
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("component {value} at index {index} exceeds the clipping bound {bound}")]
    ConstraintViolation { index: usize, value: f64, bound: f64 },
    #[error("level {level} is not {expected} (side = {side})")]
    WrongRegion {
        level: usize,
        side: usize,
        expected: &'static str,
    },
    #[error("need at least {min} samples, got {got}")]
    InsufficientSamples { min: usize, got: usize },
    #[error("need at least {min} bins, got {got}")]
    InsufficientBins { min: usize, got: usize },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid rate {0}: must be finite and >= 0")]
    InvalidRate(f64),
    #[error("index {k} out of range 0..={cap}")]
    Bounds { k: usize, cap: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("division by zero: {0}")]
    Division(&'static str),
    #[error("function is not deterministic under the frozen rng")]
    NonDeterministic,
    #[error("training diverged in phase {phase} at step {step}")]
    Diverged { phase: u8, step: usize },
    #[error("phase ordering violated: {0}")]
    PhaseOrder(String),
    #[error("not supported: {0}")]
    Unsupported(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
