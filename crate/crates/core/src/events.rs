//! Events: per-variable conjunctions of atoms used in probability queries.

use crate::error::{PcError, Result};
use crate::schema::{Value, VariableSchema};

/// How a single atom constrains its variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relation {
    Equals(Value),
    AtMost(Value),
    /// No constraint; the variable is marginalized out.
    True,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub var: usize,
    pub relation: Relation,
}

/// A conjunction of atoms with at most one atom per variable. The empty event
/// is the always-true event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Event {
    atoms: Vec<Atom>, // sorted by variable index
}

/// Result of conjoining two events.
#[derive(Debug, Clone, PartialEq)]
pub enum Conjunction {
    Event(Event),
    /// The merged event is unsatisfiable (e.g. X = 2 against X <= 1);
    /// its probability is exactly 0.
    Empty,
}

impl Event {
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self> {
        atoms.sort_by_key(|a| a.var);
        for pair in atoms.windows(2) {
            if pair[0].var == pair[1].var {
                return Err(PcError::InvalidAtom {
                    var: pair[0].var,
                    reason: "duplicate atom for variable".into(),
                });
            }
        }
        Ok(Self { atoms })
    }

    /// The always-true event.
    pub fn everything() -> Self {
        Self::default()
    }

    pub fn is_everything(&self) -> bool {
        self.atoms.iter().all(|a| matches!(a.relation, Relation::True))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom_for(&self, var: usize) -> Option<&Atom> {
        self.atoms
            .binary_search_by_key(&var, |a| a.var)
            .ok()
            .map(|i| &self.atoms[i])
    }

    /// Equality event over a complete row.
    pub fn from_row(row: &[Value]) -> Self {
        Self {
            atoms: row
                .iter()
                .enumerate()
                .map(|(var, &v)| Atom {
                    var,
                    relation: Relation::Equals(v),
                })
                .collect(),
        }
    }

    /// Equality event over a partial assignment.
    pub fn from_pairs(pairs: &[(usize, Value)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(var, v)| Atom {
                    var,
                    relation: Relation::Equals(v),
                })
                .collect(),
        )
    }

    /// Checks atom values against the schema.
    pub fn check(&self, schema: &VariableSchema) -> Result<()> {
        for atom in &self.atoms {
            if atom.var >= schema.len() {
                return Err(PcError::UnknownVariable(format!("#{}", atom.var)));
            }
            match atom.relation {
                Relation::Equals(v) | Relation::AtMost(v) => schema.check_value(atom.var, &v)?,
                Relation::True => {}
            }
        }
        Ok(())
    }

    /// True when the two events place contradictory equality atoms on a
    /// shared variable — the precondition failure for conditional queries.
    pub fn contradicts(&self, other: &Event) -> Option<usize> {
        for a in &self.atoms {
            if let Relation::Equals(va) = a.relation {
                if let Some(b) = other.atom_for(a.var) {
                    if let Relation::Equals(vb) = b.relation {
                        if va != vb {
                            return Some(a.var);
                        }
                    }
                }
            }
        }
        None
    }

    /// Conjoins two events, merging atoms per variable. An equality dominates
    /// a consistent at-most bound; incompatible combinations yield the empty
    /// (probability-zero) event. Contradictory equalities are an error.
    pub fn and(&self, other: &Event) -> Result<Conjunction> {
        let mut merged: Vec<Atom> = Vec::with_capacity(self.atoms.len() + other.atoms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.atoms.len() || j < other.atoms.len() {
            let next = if j >= other.atoms.len()
                || (i < self.atoms.len() && self.atoms[i].var < other.atoms[j].var)
            {
                let a = self.atoms[i];
                i += 1;
                a
            } else if i >= self.atoms.len() || other.atoms[j].var < self.atoms[i].var {
                let b = other.atoms[j];
                j += 1;
                b
            } else {
                let (a, b) = (self.atoms[i], other.atoms[j]);
                i += 1;
                j += 1;
                match merge_relations(a.relation, b.relation) {
                    MergedRelation::One(relation) => Atom { var: a.var, relation },
                    MergedRelation::Impossible => return Ok(Conjunction::Empty),
                    MergedRelation::Contradiction => {
                        return Err(PcError::ContradictoryAtoms { var: a.var })
                    }
                }
            };
            merged.push(next);
        }
        Ok(Conjunction::Event(Event { atoms: merged }))
    }

    /// Whether a complete row satisfies this event. Used by data filters.
    pub fn matches_row(&self, row: &[Value]) -> bool {
        self.atoms.iter().all(|atom| match atom.relation {
            Relation::True => true,
            Relation::Equals(v) => row[atom.var] == v,
            Relation::AtMost(v) => match (row[atom.var], v) {
                (Value::Discrete(x), Value::Discrete(b)) => x <= b,
                (Value::Continuous(x), Value::Continuous(b)) => x <= b,
                _ => false,
            },
        })
    }

    /// Canonical textual form, used for memo keys and audit dumps.
    pub fn canonical(&self) -> String {
        let parts: Vec<String> = self
            .atoms
            .iter()
            .map(|a| match a.relation {
                Relation::Equals(v) => format!("{}={}", a.var, v),
                Relation::AtMost(v) => format!("{}<={}", a.var, v),
                Relation::True => format!("{}:*", a.var),
            })
            .collect();
        parts.join(",")
    }
}

enum MergedRelation {
    One(Relation),
    Impossible,
    Contradiction,
}

fn value_le(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Discrete(x), Value::Discrete(y)) => x <= y,
        (Value::Continuous(x), Value::Continuous(y)) => x <= y,
        // mixed kinds are ruled out earlier by schema checks
        _ => false,
    }
}

fn merge_relations(a: Relation, b: Relation) -> MergedRelation {
    use Relation::*;
    match (a, b) {
        (True, r) | (r, True) => MergedRelation::One(r),
        (Equals(x), Equals(y)) => {
            if x == y {
                MergedRelation::One(Equals(x))
            } else {
                MergedRelation::Contradiction
            }
        }
        (Equals(x), AtMost(bound)) | (AtMost(bound), Equals(x)) => {
            if value_le(x, bound) {
                MergedRelation::One(Equals(x))
            } else {
                MergedRelation::Impossible
            }
        }
        (AtMost(x), AtMost(y)) => {
            MergedRelation::One(AtMost(if value_le(x, y) { x } else { y }))
        }
    }
}
