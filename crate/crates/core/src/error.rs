use thiserror::Error;

use crate::attack::RSearch;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("matrix is singular (|det| = {det:e})")]
    Singular { det: f64 },

    #[error("could not build {n}-dimensional independent query matrix after {attempts} attempts")]
    QueryConstruction { n: usize, attempts: usize },

    #[error("duplication count exceeded cap {r_cap} before confidence intervals converged")]
    RCapExceeded { r_cap: usize, partial: Box<RSearch> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
