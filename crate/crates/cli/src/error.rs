use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{key}: {message}")]
    Config { key: String, message: String },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] incgrad::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
