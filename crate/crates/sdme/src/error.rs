//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdmeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate coordinates for sites {0} and {1}")]
    DuplicateCoordinates(i64, i64),

    #[error("need at least 2 sites to tessellate, got {0}")]
    TooFewSites(usize),

    #[error("missing points for subject {subject} on image {image}: {missing:?}")]
    MissingPoints {
        subject: i64,
        image: i64,
        missing: Vec<u32>,
    },

    #[error("subject {0} has no records with a true label; cannot score")]
    NoLabeledRecords(i64),

    #[error("non-finite log density: {0}")]
    NonFiniteDensity(String),

    #[error("initialization failed: no finite starting point after {0} attempts")]
    InitFailed(usize),

    #[error("beta regression did not converge in {iters} iterations (last deviance change {delta:.3e})")]
    NoConvergence { iters: usize, delta: f64 },

    #[error("design matrix is rank deficient (pivot {0} ~ 0)")]
    RankDeficient(usize),

    #[error("infeasible assignment: {0}")]
    InfeasibleAssignment(String),

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
