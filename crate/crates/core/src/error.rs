use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid resolution too low: {points} interior points (minimum {minimum})")]
    Resolution { points: usize, minimum: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("minimization did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("auxiliary table invariant violated: {0}")]
    Table(String),

    #[error("table range exhausted: needed kappa {needed:.6e}, table covers up to {available:.6e}")]
    Range { needed: f64, available: f64 },

    #[error("root bracket not found: {0}")]
    Bracket(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("requested {requested} eigenvalues from a {size}-dimensional operator")]
    Dimension { requested: usize, size: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
