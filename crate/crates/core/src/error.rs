use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("joint {joint} is behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error in record {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("generation failed for {sample}: {message}")]
    Generation { sample: String, message: String },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::BehindCamera { .. } => "behind-camera",
            Error::Degenerate(_) => "degenerate-input",
            Error::NumericOverflow(_) => "numeric-overflow",
            Error::InvalidState(_) => "invalid-state",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Generation { .. } => "generation",
            Error::Mismatch(_) => "mismatch",
            Error::Diverged(_) => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
