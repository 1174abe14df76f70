use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge: estimate {estimate:.6e}, error {error:.3e} after {evals} evaluations")]
    NonConvergence { estimate: f64, error: f64, evals: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular evaluation: {0}")]
    Singular(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("torus guard: {0}")]
    TorusGuard(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
