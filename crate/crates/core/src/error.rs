use thiserror::Error;

pub type Result<T> = std::result::Result<T, DoaError>;

#[derive(Debug, Error)]
pub enum DoaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Root selection found fewer candidate roots than requested.
    #[error("estimation failure: {found} candidate roots for {wanted} sources")]
    EstimationFailure { found: usize, wanted: usize },

    /// The harmonic matrix is numerically rank deficient.
    #[error("ill-conditioned harmonics: singular value ratio {ratio:e}")]
    IllConditioned { ratio: f64 },

    /// The unit-circle search produced fewer local minima than sources.
    #[error("decomposition shortfall: {found} local minima for {wanted} harmonics")]
    Shortfall { found: usize, wanted: usize },

    #[error("solver diverged at iteration {iteration} (residual {residual:e})")]
    Divergence { iteration: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DoaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DoaError::InvalidArgument(msg.into())
    }

    /// True for errors raised by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DoaError::EstimationFailure { .. }
                | DoaError::IllConditioned { .. }
                | DoaError::Shortfall { .. }
                | DoaError::Divergence { .. }
        )
    }
}
