//! Records circuit evaluations onto an autodiff tape.
//!
//! A [`Recorder`] registers every circuit parameter as a tape input (in
//! [`ParameterView`] order, so input slot == flat parameter index) and lays
//! down a parameter-only prelude: normalized sum log-weights, normalized
//! categorical log-probability tables, and Gaussian inverse standard
//! deviations. Queries recorded afterwards share the prelude, which keeps the
//! per-query tape cost proportional to the circuit graph rather than the
//! parameter count. [`Tape::mark`]/[`Recorder::rewind`] let callers drop
//! per-query entries while keeping the prelude.

use std::collections::HashMap;

use crate::circuit::{Circuit, LeafDistribution, NodeId, NodeKind};
use crate::error::{PcError, Result};
use crate::events::{Atom, Conjunction, Event, Relation};
use crate::numeric::{LN_2PI, LOG_FLOOR};
use crate::params::ParameterView;
use crate::schema::Value;
use crate::tape::{Mark, Tape, VarId};

#[derive(Clone, Copy)]
enum FactorPrelude {
    Categorical {
        /// Start of the contiguous normalized log-probability run.
        log_probs: VarId,
        cardinality: usize,
    },
    Gaussian {
        mean: VarId,
        log_std: VarId,
        inv_std: VarId,
    },
}

pub struct Recorder<'c> {
    circuit: &'c Circuit,
    pub tape: Tape,
    view: ParameterView,
    order: Vec<NodeId>,
    /// Per sum node: start of its normalized log-weight run in the prelude.
    sum_weights: Vec<Option<VarId>>,
    /// Per leaf node: prelude info per factor.
    leaf_factors: Vec<Vec<FactorPrelude>>,
    zero: VarId,
    prelude_end: Mark,
    memo: HashMap<String, VarId>,
    /// Scratch: per-node tape id + 1 during a query recording; 0 = unset.
    node_vals: Vec<u32>,
}

impl<'c> Recorder<'c> {
    pub fn new(circuit: &'c Circuit) -> Result<Self> {
        let view = ParameterView::new(circuit);
        let order = preferred_order(circuit)?;
        let mut tape = Tape::new();

        for value in view.flatten(circuit) {
            tape.input(value);
        }
        let zero = tape.constant(0.0);

        let mut sum_weights = vec![None; circuit.num_nodes()];
        let mut leaf_factors: Vec<Vec<FactorPrelude>> = (0..circuit.num_nodes()).map(|_| Vec::new()).collect();

        for &id in &order {
            match &circuit.node(id).kind {
                NodeKind::Sum { log_weights, .. } => {
                    let logits = VarId(view.node_offset(id) as u32);
                    let z = tape.lse_run(logits, log_weights.len());
                    let mut first = None;
                    for j in 0..log_weights.len() {
                        let normalized = tape.sub(VarId(logits.0 + j as u32), z);
                        first.get_or_insert(normalized);
                    }
                    sum_weights[id] = first;
                }
                NodeKind::Product { .. } => {}
                NodeKind::Leaf { factors } => {
                    let mut offset = view.node_offset(id) as u32;
                    let mut infos = Vec::with_capacity(factors.len());
                    for (_, dist) in factors {
                        match dist {
                            LeafDistribution::Categorical { logits } => {
                                let start = VarId(offset);
                                let z = tape.lse_run(start, logits.len());
                                let mut first = None;
                                for k in 0..logits.len() {
                                    let normalized = tape.sub(VarId(start.0 + k as u32), z);
                                    first.get_or_insert(normalized);
                                }
                                infos.push(FactorPrelude::Categorical {
                                    log_probs: first.expect("cardinality >= 2"),
                                    cardinality: logits.len(),
                                });
                                offset += logits.len() as u32;
                            }
                            LeafDistribution::Gaussian { .. } => {
                                let mean = VarId(offset);
                                let log_std = VarId(offset + 1);
                                let neg = tape.neg(log_std);
                                let inv_std = tape.exp(neg);
                                infos.push(FactorPrelude::Gaussian { mean, log_std, inv_std });
                                offset += 2;
                            }
                        }
                    }
                    leaf_factors[id] = infos;
                }
            }
        }

        let prelude_end = tape.mark();
        let node_vals = vec![0u32; circuit.num_nodes()];
        Ok(Self {
            circuit,
            tape,
            view,
            order,
            sum_weights,
            leaf_factors,
            zero,
            prelude_end,
            memo: HashMap::new(),
            node_vals,
        })
    }

    pub fn circuit(&self) -> &'c Circuit {
        self.circuit
    }

    pub fn view(&self) -> &ParameterView {
        &self.view
    }

    pub fn num_params(&self) -> usize {
        self.view.len()
    }

    /// End of the parameter prelude; rewinding to this keeps the prelude.
    pub fn base(&self) -> Mark {
        self.prelude_end
    }

    pub fn value(&self, id: VarId) -> f64 {
        self.tape.value(id)
    }

    /// Drops tape entries recorded after `mark` (and the query memo).
    pub fn rewind(&mut self, mark: Mark) {
        self.tape.rewind(mark);
        self.memo.clear();
    }

    /// log P(X = row), the joint density/mass at a complete assignment,
    /// floored at exp(LOG_FLOOR).
    pub fn record_density(&mut self, row: &[Value]) -> Result<VarId> {
        let schema = self.circuit.schema();
        if row.len() < schema.len() {
            return Err(PcError::IncompleteAssignment { var: row.len() });
        }
        if row.len() > schema.len() {
            return Err(PcError::SchemaMismatch(format!(
                "assignment has {} values, schema has {}",
                row.len(),
                schema.len()
            )));
        }
        for (var, value) in row.iter().enumerate() {
            schema.check_value(var, value)?;
        }
        self.record_event_unchecked(&Event::from_row(row))
    }

    /// log P(event), marginalizing unconstrained variables.
    pub fn record_event(&mut self, event: &Event) -> Result<VarId> {
        event.check(self.circuit.schema())?;
        self.record_event_unchecked(event)
    }

    /// P(f | g) as exp(log P(f ∧ g) − log P(g)). Errors when f and g carry
    /// contradictory equality atoms or when P(g) underflows the log floor.
    /// An unsatisfiable (but not contradictory) conjunction yields constant 0.
    pub fn record_conditional(&mut self, f: &Event, g: &Event) -> Result<VarId> {
        f.check(self.circuit.schema())?;
        g.check(self.circuit.schema())?;
        let fg = match f.and(g)? {
            Conjunction::Event(e) => e,
            Conjunction::Empty => return Ok(self.tape.constant(0.0)),
        };
        let log_g = self.record_event_unchecked(g)?;
        if self.tape.value(log_g) <= LOG_FLOOR {
            return Err(PcError::ConditionOnNull);
        }
        let log_fg = self.record_event_unchecked(&fg)?;
        let diff = self.tape.sub(log_fg, log_g);
        Ok(self.tape.exp(diff))
    }

    fn record_event_unchecked(&mut self, event: &Event) -> Result<VarId> {
        let key = event.canonical();
        if let Some(&hit) = self.memo.get(&key) {
            return Ok(hit);
        }

        let circuit = self.circuit;
        self.node_vals.iter_mut().for_each(|v| *v = 0);
        for idx in 0..self.order.len() {
            let id = self.order[idx];
            let val = match &circuit.node(id).kind {
                NodeKind::Leaf { factors } => self.record_leaf(id, factors, event)?,
                NodeKind::Product { children } => match children.len() {
                    1 => VarId(self.node_vals[children[0]] - 1),
                    2 => {
                        let a = VarId(self.node_vals[children[0]] - 1);
                        let b = VarId(self.node_vals[children[1]] - 1);
                        self.tape.add(a, b)
                    }
                    _ => {
                        let ids: Vec<VarId> = children
                            .iter()
                            .map(|&c| VarId(self.node_vals[c] - 1))
                            .collect();
                        self.tape.sum_args(&ids)
                    }
                },
                NodeKind::Sum { children, .. } => {
                    let w = self.sum_weights[id].expect("sum prelude");
                    let first = VarId(self.node_vals[children[0]] - 1);
                    let contiguous = children
                        .iter()
                        .enumerate()
                        .all(|(j, &c)| self.node_vals[c] == first.0 + j as u32 + 1);
                    if contiguous {
                        self.tape.weighted_lse(w, first, children.len())
                    } else {
                        let ids: Vec<VarId> = children
                            .iter()
                            .enumerate()
                            .map(|(j, &c)| {
                                let cv = VarId(self.node_vals[c] - 1);
                                self.tape.add(VarId(w.0 + j as u32), cv)
                            })
                            .collect();
                        self.tape.lse_args(&ids)
                    }
                }
            };
            self.node_vals[id] = val.0 + 1;
        }

        let root = VarId(self.node_vals[circuit.root()] - 1);
        let floored = self.tape.max_const(root, LOG_FLOOR);
        self.memo.insert(key, floored);
        Ok(floored)
    }

    fn record_leaf(
        &mut self,
        id: NodeId,
        factors: &[(usize, LeafDistribution)],
        event: &Event,
    ) -> Result<VarId> {
        let mut measures = Vec::with_capacity(factors.len());
        for (fi, (var, _)) in factors.iter().enumerate() {
            let atom = event.atom_for(*var).copied();
            measures.push(self.record_factor_measure(id, fi, *var, atom)?);
        }
        Ok(match measures.len() {
            1 => measures[0],
            2 => self.tape.add(measures[0], measures[1]),
            _ => self.tape.sum_args(&measures),
        })
    }

    /// Log measure of one atom under one univariate factor: mass/density for
    /// equality, CDF for at-most, log 1 = 0 when unconstrained.
    fn record_factor_measure(
        &mut self,
        id: NodeId,
        factor: usize,
        var: usize,
        atom: Option<Atom>,
    ) -> Result<VarId> {
        let relation = match atom {
            None => return Ok(self.zero),
            Some(a) => a.relation,
        };
        let info = self.leaf_factors[id][factor];
        match (info, relation) {
            (_, Relation::True) => Ok(self.zero),
            (FactorPrelude::Categorical { log_probs, cardinality }, Relation::Equals(v)) => {
                let v = v.as_discrete().ok_or(PcError::ValueKindMismatch {
                    var,
                    expected: "discrete",
                })?;
                debug_assert!(v < cardinality);
                Ok(VarId(log_probs.0 + v as u32))
            }
            (FactorPrelude::Categorical { log_probs, cardinality }, Relation::AtMost(v)) => {
                let v = v.as_discrete().ok_or(PcError::ValueKindMismatch {
                    var,
                    expected: "discrete",
                })?;
                if v + 1 >= cardinality {
                    Ok(self.zero)
                } else {
                    Ok(self.tape.lse_run(log_probs, v + 1))
                }
            }
            (FactorPrelude::Gaussian { mean, log_std, inv_std }, Relation::Equals(v)) => {
                let x = v.as_continuous().ok_or(PcError::ValueKindMismatch {
                    var,
                    expected: "continuous",
                })?;
                let cx = self.tape.constant(x);
                let diff = self.tape.sub(cx, mean);
                let z = self.tape.mul(diff, inv_std);
                let z2 = self.tape.mul(z, z);
                let quad = self.tape.scale(z2, -0.5);
                let no_std = self.tape.sub(quad, log_std);
                Ok(self.tape.shift(no_std, -0.5 * LN_2PI))
            }
            (FactorPrelude::Gaussian { mean, inv_std, .. }, Relation::AtMost(v)) => {
                let x = v.as_continuous().ok_or(PcError::ValueKindMismatch {
                    var,
                    expected: "continuous",
                })?;
                // log Φ(z) = log(0.5 erfc(-z/√2)), guarded against erfc underflow.
                let cx = self.tape.constant(x);
                let diff = self.tape.sub(cx, mean);
                let z = self.tape.mul(diff, inv_std);
                let arg = self.tape.scale(z, -std::f64::consts::FRAC_1_SQRT_2);
                let e = self.tape.erfc(arg);
                let guarded = self.tape.max_const(e, 1e-300);
                let half = self.tape.scale(guarded, 0.5);
                Ok(self.tape.ln(half))
            }
        }
    }
}

/// Topological order preferring ascending node ids: when every reachable
/// node's children have smaller ids (true for generated and checkpointed
/// circuits), products of a partition keep consecutive ids, which lets sum
/// nodes use the fused contiguous-run op. Falls back to DFS postorder.
fn preferred_order(circuit: &Circuit) -> Result<Vec<NodeId>> {
    let post = circuit.eval_order()?;
    let mut sorted = post.clone();
    sorted.sort_unstable();
    let id_ordered = sorted
        .iter()
        .all(|&id| circuit.node(id).children().iter().all(|&c| c < id));
    Ok(if id_ordered { sorted } else { post })
}

/// Plain-value evaluation built on a reusable recorder: each query records
/// onto the tape, reads the root value, and rewinds back to the prelude.
pub struct Evaluator<'c> {
    rec: Recorder<'c>,
}

impl<'c> Evaluator<'c> {
    pub fn new(circuit: &'c Circuit) -> Result<Self> {
        Ok(Self { rec: Recorder::new(circuit)? })
    }

    pub fn log_density(&mut self, row: &[Value]) -> Result<f64> {
        let base = self.rec.base();
        let result = self.rec.record_density(row).map(|id| self.rec.value(id));
        self.rec.rewind(base);
        result
    }

    pub fn log_event_prob(&mut self, event: &Event) -> Result<f64> {
        let base = self.rec.base();
        let result = self.rec.record_event(event).map(|id| self.rec.value(id));
        self.rec.rewind(base);
        result
    }

    pub fn conditional_prob(&mut self, f: &Event, g: &Event) -> Result<f64> {
        let base = self.rec.base();
        let result = self
            .rec
            .record_conditional(f, g)
            .map(|id| self.rec.value(id).clamp(0.0, 1.0));
        self.rec.rewind(base);
        result
    }
}
