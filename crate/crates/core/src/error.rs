use thiserror::Error;

use crate::collective::Basis;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state is in the {found:?} basis, operation requires {expected:?}")]
    BasisMismatch { expected: Basis, found: Basis },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rotation-angle grid is not equidistant on [0, 2pi)")]
    NonEquidistantGrid,

    #[error("{samples} samples cannot resolve harmonics up to |m| = {max_order} (need at least {required})")]
    Aliasing {
        samples: usize,
        max_order: usize,
        required: usize,
    },

    #[error("integrator did not converge: {0}")]
    Convergence(String),

    #[error("system size N = {n} exceeds the brute-force limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("bright and dark count distributions cannot be separated")]
    Inseparable,

    #[error("no histogram bins below the threshold")]
    EmptyRegion,

    #[error("degenerate likelihood: {0}")]
    DegenerateFit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
