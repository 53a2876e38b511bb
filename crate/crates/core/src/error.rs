use thiserror::Error;

/// Errors raised by the numerical core, the controllers and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rejection sampling exhausted after {attempts} attempts: {reason}")]
    SamplingExhausted { attempts: usize, reason: String },

    #[error("optimistic search found no admissible model")]
    OptimisticSearchFailed,

    #[error("state diverged: norm {norm:e} exceeds the guard")]
    Diverged { norm: f64 },

    #[error("empty window")]
    EmptyWindow,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Config { .. } => 2,
            Error::Io { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
