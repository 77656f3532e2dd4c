use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the simulator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot scale a zero-norm tensor set to norm {0}")]
    ZeroNorm(f64),
    #[error("{0} has zero Frobenius norm")]
    ZeroFrobenius(&'static str),
    #[error("singular values must be nonnegative with at least one positive entry")]
    DegenerateSpectrum,
    #[error("singular value entropy is zero; value model is undefined")]
    ZeroEntropy,
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
