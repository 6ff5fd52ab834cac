use thiserror::Error;

/// Errors reported by the batch primitives and the finger structures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("position {pos} out of range for length {len}")]
    Range { pos: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("chain rebalancing did not converge within {cap} iterations")]
    ChainRebalance { cap: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
