use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The constraint matrix lost row rank. `index` names the observation or
    /// rollout step where it happened, when known.
    #[error("degenerate constraint (rank {rank} < {rows} rows){}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    DegenerateConstraint {
        rank: usize,
        rows: usize,
        index: Option<usize>,
    },

    #[error("policy is undefined at state {0:?}")]
    SingularState(Vec<f64>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("residuals are not finite at the starting point")]
    InvalidStart,

    #[error("dataset carries no ground truth")]
    MissingGroundTruth,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attaches an observation/step index to a degenerate-constraint error.
    pub fn at_index(self, idx: usize) -> Self {
        match self {
            Error::DegenerateConstraint { rank, rows, .. } => Error::DegenerateConstraint {
                rank,
                rows,
                index: Some(idx),
            },
            other => other,
        }
    }
}
