use thiserror::Error;

/// Errors raised by the estimators, fitting routines and samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient: column {index} ({name}) is collinear with earlier columns")]
    RankDeficient { index: usize, name: String },

    #[error("logistic regression diverged (standardized coefficient norm {norm:.1}); the response is (quasi-)separated by the design, consider regularization or a smaller design")]
    Separation { norm: f64 },

    #[error("binary response has a single class ({0} rows)")]
    SingleClass(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
