use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("item index {index} out of range for {m} items")]
    ItemOutOfRange { index: usize, m: usize },

    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),

    #[error("bundle dimension {got} does not match item count {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid valuation: {0}")]
    InvalidValuation(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("valuation class mismatch: expected {expected}, found {found}")]
    ClassMismatch { expected: &'static str, found: &'static str },

    #[error("multi-unit marginals are increasing for agent {0}")]
    IncreasingMarginals(usize),

    #[error("curve of agent {agent} on item {item} is not concave")]
    NonConcave { agent: usize, item: usize },

    #[error("capacity {0} outside (0, 1]")]
    InvalidCapacity(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("brute-force size guard exceeded: {0} assignments")]
    SizeGuard(f64),

    #[error("mechanism requires exactly two agents, got {0}")]
    AgentCount(usize),

    #[error("negative value {0}")]
    NegativeValue(f64),

    #[error("rounding invariant violated: {0}")]
    Rounding(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
