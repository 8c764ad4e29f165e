use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate corner configuration: {0}")]
    DegenerateCorners(String),

    #[error("point maps to infinity (projective depth {depth:e})")]
    PointAtInfinity { depth: f64 },

    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("crop out of bounds: {0}")]
    OutOfBounds(String),

    #[error("solver diverged: {0}")]
    SolverDiverged(String),

    #[error("estimator protocol error: {0}")]
    Protocol(String),

    #[error("trajectory length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyList(&'static str),

    #[error("roc curve needs both positive and negative records ({positives} positives, {negatives} negatives)")]
    DegenerateLabels { positives: usize, negatives: usize },

    #[error("center distance {d_c_m} m infeasible, at most {max_m} m fits")]
    InfeasibleDc { d_c_m: f64, max_m: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed image {path:?}: {msg}")]
    BadImage { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors raised by an estimator backend, as opposed to bad input or config.
    pub fn is_estimator_error(&self) -> bool {
        matches!(self, Error::SolverDiverged(_) | Error::Protocol(_))
    }
}
