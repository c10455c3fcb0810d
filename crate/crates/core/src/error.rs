use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmcaError {
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("symmetric eigendecomposition did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("labels are required for the {0} coding scheme")]
    MissingLabels(&'static str),

    #[error("state {0} has zero marginal probability")]
    ZeroMarginal(usize),

    #[error("integration domain too small: marginal mass {mass:.6} < {required:.6}")]
    DomainTooSmall { mass: f64, required: f64 },

    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: u64,
        #[source]
        source: Box<FmcaError>,
    },
}

pub type Result<T> = std::result::Result<T, FmcaError>;
