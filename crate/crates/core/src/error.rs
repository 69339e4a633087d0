//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PcError>;

#[derive(Debug, Error)]
pub enum PcError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("value out of range for variable {var}: got {got}, cardinality {cardinality}")]
    ValueOutOfRange {
        var: usize,
        got: String,
        cardinality: usize,
    },

    #[error("assignment does not cover variable {var}")]
    IncompleteAssignment { var: usize },

    #[error("variable {var} expected a {expected} value")]
    ValueKindMismatch { var: usize, expected: &'static str },

    #[error("invalid atom on variable {var}: {reason}")]
    InvalidAtom { var: usize, reason: String },

    #[error("contradictory atoms on variable {var}")]
    ContradictoryAtoms { var: usize },

    #[error("conditioning event has probability below exp(-700)")]
    ConditionOnNull,

    #[error("circuit contains a cycle through node {node}")]
    CyclicCircuit { node: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("corrupt file{}: {reason}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    CorruptFile { line: Option<usize>, reason: String },

    #[error("unsupported format version `{0}`")]
    UnsupportedVersion(String),

    #[error("data error at row {row}, column {col}: {reason}")]
    DataCell {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("advice error at line {line}: {reason}")]
    Advice { line: usize, reason: String },

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("empty domain set: {0}")]
    EmptyDomainSet(String),

    #[error("non-finite value produced by primitive `{primitive}` at tape entry {index}")]
    NonFinite { primitive: &'static str, index: usize },

    #[error("non-finite training objective at epoch {epoch}: {detail}")]
    NonFiniteObjective { epoch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
