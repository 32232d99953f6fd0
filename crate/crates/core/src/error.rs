use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix `{name}` is not positive definite (pivot {pivot} collapsed)")]
    NotPositiveDefinite { name: String, pivot: usize },

    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("iteration {iteration}: {source}")]
    Chain { iteration: usize, source: Box<Error> },

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Re-labels a factorization failure with the name of the matrix that caused it.
    pub fn named(self, name: &str) -> Self {
        match self {
            Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
                name: name.to_string(),
                pivot,
            },
            Error::NotSymmetric { asymmetry, .. } => Error::NotSymmetric {
                name: name.to_string(),
                asymmetry,
            },
            other => other,
        }
    }
}
