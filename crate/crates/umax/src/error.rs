use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative projection stopped before reaching its tolerance. Carries
    /// the best distance value found so callers can decide whether it is
    /// usable anyway.
    #[error("projection did not converge within {iterations} iterations (best distance {best:.6e})")]
    ConvergenceFailure { best: f64, iterations: usize },

    #[error("ellipticity violation: {0}")]
    EllipticityViolation(String),

    #[error("regression basis degenerate: {0}")]
    BasisDegeneracy(String),

    #[error("solver diverged at time step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// Wraps an error with the (path, step) location it occurred at.
    #[error("at path {path}, step {step}: {source}")]
    AtPathStep {
        path: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at(self, path: usize, step: usize) -> Self {
        Error::AtPathStep {
            path,
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
