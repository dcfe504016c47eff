use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("domain error at row {row}: {message}")]
    Domain { row: usize, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("state error: {0}")]
    State(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
