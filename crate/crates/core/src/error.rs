use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
///
/// Precondition violations are reported as [`Error::InvalidArgument`];
/// numerical failures carry enough context to locate the offending solve.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("regularized solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    SolveResidual { residual: f64, bound: f64 },

    #[error("power iteration did not reach tolerance {tol:.1e} within {max_iter} iterations")]
    PowerIterationDiverged { tol: f64, max_iter: usize },

    #[error("self-similarity window is empty: rho * n0 = {rho_n0} exceeds truncation {len}")]
    EmptyWindow { rho_n0: f64, len: usize },

    #[error("replicate (n = {n}, replicate = {replicate}) failed: {source}")]
    Replicate {
        n: f64,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
