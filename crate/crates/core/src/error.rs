use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite deformation gradient entry")]
    NonFinite,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("field does not match grid: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("node budget exceeded: {nodes} nodes requested, cap is {cap}")]
    BudgetExceeded { nodes: usize, cap: usize },

    #[error("law fingerprint mismatch: cache holds {cached}, caller passed {given}")]
    FingerprintMismatch { cached: String, given: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("hypothesis {name} failed: {detail}")]
    Hypothesis { name: String, detail: String },

    #[error("boundary condition violated at node {node}")]
    BoundaryViolation { node: usize },

    #[error("effective density provider failed: {0}")]
    Provider(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
