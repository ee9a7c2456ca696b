use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gpi_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{path}: {msg}")]
    Metrics { path: String, msg: String },

    #[error("plot rendering failed: {0}")]
    Render(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
