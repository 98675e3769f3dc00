use thiserror::Error;

/// Errors raised by the filter, the consensus engine and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Gram matrix is not numerically positive definite (condition estimate {condition:.3e}); increase sigma_reg")]
    SingularGram { condition: f64 },

    #[error("{name} is not symmetric positive definite")]
    Covariance { name: &'static str },

    #[error("graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("node payloads have inconsistent shapes: node 0 is {expected:?}, node {node} is {got:?}")]
    ShapeMismatch {
        node: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("target coincides with sensor at ({0}, {1}); range is zero")]
    Geometry(f64, f64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
