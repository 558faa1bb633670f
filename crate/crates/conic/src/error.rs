use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}
