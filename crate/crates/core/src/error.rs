use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: wrong shapes, non-finite values, out-of-range symbols.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A probability vector that is negative somewhere or does not sum to one.
    #[error("invalid probability vector ({what}): {reason}")]
    InvalidDistribution { what: String, reason: String },

    /// `-phi(x) ln p(x)` with `p(x) = 0` and `phi(x) != 0`.
    #[error("infinite information at symbol {symbol}: zero probability with nonzero weight")]
    InfiniteInformation { symbol: usize },

    #[error("weight function must be non-negative, found {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    /// Enumeration would exceed the string-count cap.
    #[error("size guard exceeded: {requested} strings requested, limit is {limit}")]
    SizeGuard { requested: f64, limit: u64 },

    #[error("transition kernel is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Doeblin condition fails: {0}")]
    DoeblinFailure(String),

    #[error("power iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("iterate vanished: kernel is identically zero on a reachable block")]
    ZeroIterate,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
