use alloc::string::String;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix {index} is not skew-symmetric (residual {residual:e})")]
    NotSkew { index: usize, residual: f64 },

    #[error("form is not surjective: rank {rank} < fibre dimension {dim_c}")]
    NotSurjective { rank: usize, dim_c: usize },

    #[error("degenerate path: pivot {pivot:e} below threshold {threshold:e}")]
    DegeneratePath { pivot: f64, threshold: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("path grids or dimensions do not match")]
    GridMismatch,

    #[error("quadrature did not reach tolerance (estimate {estimate:e}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: &str) -> Error {
    Error::InvalidArgument(String::from(msg))
}
