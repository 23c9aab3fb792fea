use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the SUCPA library and CLI.
///
/// Variants fall in two families: validation problems (bad input, bad
/// shapes, unparseable files) and numeric problems (overflow, solver
/// failure). [`SucpaError::exit_code`] maps them onto the CLI exit codes.
#[derive(Debug, Error)]
pub enum SucpaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric overflow in {context}")]
    NumericOverflow { context: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SucpaError>,
    },

    #[error("orbit has no increment with |delta_1| above resolution")]
    NoUsableStep,
}

impl SucpaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SucpaError::InvalidInput(msg.into())
    }

    pub fn overflow(context: impl Into<String>) -> Self {
        SucpaError::NumericOverflow {
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SucpaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for overflow / solver failures, false for validation errors.
    pub fn is_numeric(&self) -> bool {
        match self {
            SucpaError::NumericOverflow { .. }
            | SucpaError::Numeric(_)
            | SucpaError::NoUsableStep => true,
            SucpaError::Step { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// CLI exit code: 2 for numeric errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() {
            2
        } else {
            1
        }
    }
}

pub type Result<T, E = SucpaError> = std::result::Result<T, E>;
