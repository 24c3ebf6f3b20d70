use thiserror::Error;

pub type Result<T> = std::result::Result<T, CgscError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CgscError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("non-finite entry in {0}")]
    NonFiniteEntry(&'static str),

    #[error("group label {0} has no members")]
    EmptyGroupLabel(usize),

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel {0} has zero 1-norm")]
    ZeroKernel(usize),

    #[error("weights are identically zero")]
    ZeroWeights,

    #[error("kernel dictionary has not been normalized")]
    NotNormalized,

    #[error("operator norm estimate {estimate} exceeds bound {bound}")]
    NormBoundViolated { estimate: f64, bound: f64 },

    #[error("invalid kernel subset: {0}")]
    InvalidSubset(String),

    #[error("could not place {requested} sources with separation {min_separation} (placed {placed})")]
    PlacementFailed {
        requested: usize,
        placed: usize,
        min_separation: usize,
    },

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
}
