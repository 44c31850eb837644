use thiserror::Error;

/// Errors raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("size cap exceeded: {what} needs {requested} elements, cap is {cap}")]
    SizeCapExceeded {
        what: &'static str,
        requested: u128,
        cap: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("singular diagonal block at time step {step}")]
    SingularBlock { step: usize },

    #[error("premise violated: {0}")]
    PremiseViolated(String),

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("parameter split missing: {0}")]
    MissingSplit(&'static str),

    #[error("{what} must be a power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
