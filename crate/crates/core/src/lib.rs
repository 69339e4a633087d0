//! Probabilistic circuits that learn from data and declarative domain
//! knowledge. Expert constraints (generalization, privileged information,
//! context-specific independence, class imbalance, monotonicity, synergy,
//! preference) compile into differentiable penalties over exact conditional
//! queries; training maximizes penalized likelihood under an escalating
//! penalty-weight schedule.

pub mod advice;
pub mod autodiff;
pub mod checkpoint;
pub mod circuit;
pub mod constraints;
pub mod data;
pub mod error;
pub mod events;
pub mod inference;
pub mod numeric;
pub mod params;
pub mod recorder;
pub mod schema;
pub mod tape;
pub mod training;

pub use circuit::{
    build_random_structure, validate, Circuit, LeafDistribution, Node, NodeId, NodeKind,
    StructureConfig, ValidationReport, Violation,
};
pub use error::{PcError, Result};
pub use events::{Atom, Conjunction, Event, Relation};
pub use inference::{conditional_prob, log_density, log_event_prob, sample};
pub use params::ParameterView;
pub use recorder::{Evaluator, Recorder};
pub use schema::{Row, Value, VarKind, VariableSchema};
pub use tape::{Mark, Tape, VarId};
