//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by all modules.
///
/// Resource limits (depth caps, requirement caps) are distinct from rejected
/// inputs so that batch drivers can map them to different exit codes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("prefix length {requested} exceeds string length {len}")]
    PrefixOutOfRange { requested: usize, len: usize },

    #[error("component index {index} out of range 1..={count}")]
    ComponentOutOfRange { index: u32, count: u32 },

    #[error("product of an empty list of classes")]
    EmptyProduct,

    #[error("coordinate overflow while remapping to a join position")]
    CoordinateOverflow,

    #[error("functional index {index} out of bounds (bound {bound})")]
    IndexOutOfBounds { index: u32, bound: u32 },

    #[error("refinement depth {required} exceeds cap {cap}")]
    DepthCapExceeded { required: u32, cap: u32 },

    #[error("family validation failed: {0}")]
    InvalidFamily(String),

    #[error("{count} requirements would be instantiated (cap {cap})")]
    RequirementCapExceeded { count: u64, cap: u64 },

    #[error("class is empty below node {node:?}")]
    EmptyBranch { node: String },

    #[error("no branching node found within budget below {node:?}; class not perfect at this budget")]
    NotPerfect { node: String },

    #[error("emptiness inconclusive at stage budget {budget}; use a finite-horizon family or a larger budget")]
    InconclusiveBudget { budget: u32 },

    #[error("oracle bits exhausted at index {index} (available {available})")]
    OracleExhausted { index: u32, available: u32 },

    #[error("rejected configuration: {0}")]
    InvalidConfig(String),

    #[error("stale witness: {0}")]
    StaleWitness(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("dichotomy undetermined for {0}")]
    Undetermined(String),

    #[error("prefixes too short: {0}")]
    PrefixTooShort(String),

    #[error("level {level} exceeds treemap level cap {cap}")]
    LevelOutOfRange { level: u32, cap: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;
