use thiserror::Error;

pub type Result<T> = std::result::Result<T, MduError>;

#[derive(Debug, Error)]
pub enum MduError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid link function: delta must be finite and positive, got {0}")]
    InvalidLink(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} {what}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MduError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MduError::InvalidOptions(_) => 1,
            MduError::Undefined(_) | MduError::Numerical(_) => 3,
            _ => 2,
        }
    }
}
