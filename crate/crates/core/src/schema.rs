//! Variable schemas and typed values.

use crate::error::{PcError, Result};

/// What a single random variable ranges over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarKind {
    Discrete { cardinality: usize },
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

/// Ordered set of named variables. Variable indices are positions in this list.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSchema {
    vars: Vec<Variable>,
}

impl VariableSchema {
    pub fn new(vars: Vec<(String, VarKind)>) -> Result<Self> {
        if vars.is_empty() {
            return Err(PcError::InvalidSchema("schema has no variables".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, kind) in &vars {
            if name.is_empty() {
                return Err(PcError::InvalidSchema("empty variable name".into()));
            }
            if name.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(PcError::InvalidSchema(format!(
                    "variable name `{name}` contains whitespace or comma"
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(PcError::InvalidSchema(format!(
                    "duplicate variable name `{name}`"
                )));
            }
            if let VarKind::Discrete { cardinality } = kind {
                if *cardinality < 2 {
                    return Err(PcError::InvalidSchema(format!(
                        "variable `{name}` has cardinality {cardinality}, need >= 2"
                    )));
                }
            }
        }
        Ok(Self {
            vars: vars
                .into_iter()
                .map(|(name, kind)| Variable { name, kind })
                .collect(),
        })
    }

    /// Convenience constructor for an all-binary schema.
    pub fn binary(names: &[&str]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| (n.to_string(), VarKind::Discrete { cardinality: 2 }))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, idx: usize) -> &Variable {
        &self.vars[idx]
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.vars[idx].name
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| PcError::UnknownVariable(name.to_string()))
    }

    pub fn is_discrete(&self, idx: usize) -> bool {
        matches!(self.vars[idx].kind, VarKind::Discrete { .. })
    }

    pub fn cardinality(&self, idx: usize) -> Option<usize> {
        match self.vars[idx].kind {
            VarKind::Discrete { cardinality } => Some(cardinality),
            VarKind::Continuous => None,
        }
    }

    /// Checks that a value is admissible for the variable at `idx`.
    pub fn check_value(&self, idx: usize, value: &Value) -> Result<()> {
        if idx >= self.vars.len() {
            return Err(PcError::UnknownVariable(format!("#{idx}")));
        }
        match (&self.vars[idx].kind, value) {
            (VarKind::Discrete { cardinality }, Value::Discrete(v)) => {
                if v >= cardinality {
                    Err(PcError::ValueOutOfRange {
                        var: idx,
                        got: v.to_string(),
                        cardinality: *cardinality,
                    })
                } else {
                    Ok(())
                }
            }
            (VarKind::Continuous, Value::Continuous(x)) => {
                if x.is_finite() {
                    Ok(())
                } else {
                    Err(PcError::InvalidAtom {
                        var: idx,
                        reason: format!("non-finite value {x}"),
                    })
                }
            }
            (VarKind::Discrete { .. }, Value::Continuous(_)) => Err(PcError::ValueKindMismatch {
                var: idx,
                expected: "discrete",
            }),
            (VarKind::Continuous, Value::Discrete(_)) => Err(PcError::ValueKindMismatch {
                var: idx,
                expected: "continuous",
            }),
        }
    }
}

/// A single observed value, typed to match the variable kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Discrete(usize),
    Continuous(f64),
}

impl Value {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Value::Discrete(v) => Some(*v),
            Value::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<f64> {
        match self {
            Value::Continuous(x) => Some(*x),
            Value::Discrete(_) => None,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Discrete(v) => write!(f, "{v}"),
            Value::Continuous(x) => write!(f, "{x}"),
        }
    }
}

/// A complete row of values, one per schema variable.
pub type Row = Vec<Value>;
