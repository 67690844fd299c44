use thiserror::Error;

/// Errors produced anywhere in the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument falls outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data or a fitted quantity violates a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An iterative or quadrature routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The Bass optimiser stopped without meeting its convergence criterion.
    #[error(
        "Bass fit did not converge after {iterations} iterations \
         (best B = {best_innovation:e}, C = {best_imitation:e}, residual norm = {residual_norm:e})"
    )]
    NonConvergence {
        iterations: usize,
        best_innovation: f64,
        best_imitation: f64,
        residual_norm: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; carries every offending line.
    #[error("input error in {path}: {message}")]
    Input { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for this error: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NonConvergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
