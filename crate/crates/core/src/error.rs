use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid study window: {0}")]
    InvalidWindow(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("point ({x}, {t}) lies outside the bounding rectangle [0, {x_max}] x [0, {t_max}]")]
    OutsideRectangle { x: f64, t: f64, x_max: f64, t_max: f64 },
    #[error("observation {index} at ({x}, {t}) is outside the observation parallelogram")]
    OutsideSupport { index: usize, x: f64, t: f64 },
    #[error("selection probability {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("estimation found no root: {0}")]
    NoRoot(String),
    #[error("estimate hit the parameter-space boundary: {0}")]
    BoundaryHit(String),
    #[error("empty sample")]
    EmptySample,
    #[error("Cholesky factorization failed even with jitter {0:e}")]
    FactorizationFailed(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
