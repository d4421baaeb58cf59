use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BbsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ball density {balls}/{len} is not below one half")]
    DensityAtLeastHalf { balls: usize, len: usize },
    #[error("carrier pass did not close: start load {start}, end load {end}")]
    CarrierNotStationary { start: u32, end: u32 },
    #[error("open boundary pass left {0} balls in the carrier")]
    OpenBoundaryOverflow(u32),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("front reached the lattice boundary: {0}")]
    Wrapping(String),
}

pub type Result<T> = std::result::Result<T, BbsError>;
