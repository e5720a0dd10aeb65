use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("outcome index {index} out of range for {len} outcomes")]
    Index { index: usize, len: usize },

    /// The generalized prediction handed to a substitution function is not a
    /// superprediction: the best achievable min-max excess is still positive.
    #[error("substitution infeasible: best min-max excess {excess:.3e} exceeds tolerance")]
    Infeasible { excess: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("degenerate update: {0}")]
    Degenerate(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("missing columns: {}", .0.join(", "))]
    Schema(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
