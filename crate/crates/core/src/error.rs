use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power iteration did not converge; last estimate {estimate}")]
    PowerIteration { estimate: f64 },

    #[error("missing problem constant: {0}")]
    MissingConstant(&'static str),

    #[error("line search requires a descent direction (slope {slope})")]
    NotDescent { slope: f64 },

    #[error("gradient residual routes disagree: relative difference {rel}")]
    ResidualMismatch { rel: f64 },

    #[error("nonpositive gap {gap} at index {index} inside fit window")]
    NonPositiveGap { index: usize, gap: f64 },

    #[error("line {line}: {reason} (token \"{token}\")")]
    Parse {
        line: usize,
        token: String,
        reason: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
