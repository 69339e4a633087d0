//! Flat view over every trainable parameter of a circuit.
//!
//! The flat ordering walks nodes by id; within a node, sum logits come in
//! child order, then leaf factors in factor order (categorical logits by
//! category, Gaussian mean then log_std). The same ordering is used when
//! registering tape inputs, so flat index == tape input slot.

use crate::circuit::{Circuit, LeafDistribution, NodeId, NodeKind};

/// Addresses one scalar parameter inside a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    SumLogit { node: NodeId, child: usize },
    CatLogit { node: NodeId, factor: usize, category: usize },
    GaussMean { node: NodeId, factor: usize },
    GaussLogStd { node: NodeId, factor: usize },
}

/// Bijection between flat indices 0..len and parameter slots.
#[derive(Debug, Clone)]
pub struct ParameterView {
    slots: Vec<Slot>,
    /// Flat offset of each node's first parameter.
    node_offsets: Vec<usize>,
}

impl ParameterView {
    pub fn new(circuit: &Circuit) -> Self {
        let mut slots = Vec::new();
        let mut node_offsets = Vec::with_capacity(circuit.num_nodes());
        for id in 0..circuit.num_nodes() {
            node_offsets.push(slots.len());
            match &circuit.node(id).kind {
                NodeKind::Sum { log_weights, .. } => {
                    for child in 0..log_weights.len() {
                        slots.push(Slot::SumLogit { node: id, child });
                    }
                }
                NodeKind::Product { .. } => {}
                NodeKind::Leaf { factors } => {
                    for (fi, (_, dist)) in factors.iter().enumerate() {
                        match dist {
                            LeafDistribution::Categorical { logits } => {
                                for category in 0..logits.len() {
                                    slots.push(Slot::CatLogit {
                                        node: id,
                                        factor: fi,
                                        category,
                                    });
                                }
                            }
                            LeafDistribution::Gaussian { .. } => {
                                slots.push(Slot::GaussMean { node: id, factor: fi });
                                slots.push(Slot::GaussLogStd { node: id, factor: fi });
                            }
                        }
                    }
                }
            }
        }
        Self { slots, node_offsets }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, flat: usize) -> Slot {
        self.slots[flat]
    }

    /// Flat offset of the first parameter belonging to `node`.
    pub fn node_offset(&self, node: NodeId) -> usize {
        self.node_offsets[node]
    }

    pub fn flatten(&self, circuit: &Circuit) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            out.push(read_slot(circuit, *slot));
        }
        out
    }

    pub fn write_back(&self, circuit: &mut Circuit, values: &[f64]) {
        assert_eq!(values.len(), self.slots.len());
        for (slot, &v) in self.slots.iter().zip(values) {
            write_slot(circuit, *slot, v);
        }
    }
}

fn read_slot(circuit: &Circuit, slot: Slot) -> f64 {
    match slot {
        Slot::SumLogit { node, child } => match &circuit.node(node).kind {
            NodeKind::Sum { log_weights, .. } => log_weights[child],
            _ => unreachable!(),
        },
        Slot::CatLogit { node, factor, category } => match &circuit.node(node).kind {
            NodeKind::Leaf { factors } => match &factors[factor].1 {
                LeafDistribution::Categorical { logits } => logits[category],
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
        Slot::GaussMean { node, factor } => match &circuit.node(node).kind {
            NodeKind::Leaf { factors } => match &factors[factor].1 {
                LeafDistribution::Gaussian { mean, .. } => *mean,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
        Slot::GaussLogStd { node, factor } => match &circuit.node(node).kind {
            NodeKind::Leaf { factors } => match &factors[factor].1 {
                LeafDistribution::Gaussian { log_std, .. } => *log_std,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
    }
}

fn write_slot(circuit: &mut Circuit, slot: Slot, v: f64) {
    match slot {
        Slot::SumLogit { node, child } => match &mut circuit.node_mut(node).kind {
            NodeKind::Sum { log_weights, .. } => log_weights[child] = v,
            _ => unreachable!(),
        },
        Slot::CatLogit { node, factor, category } => match &mut circuit.node_mut(node).kind {
            NodeKind::Leaf { factors } => match &mut factors[factor].1 {
                LeafDistribution::Categorical { logits } => logits[category] = v,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
        Slot::GaussMean { node, factor } => match &mut circuit.node_mut(node).kind {
            NodeKind::Leaf { factors } => match &mut factors[factor].1 {
                LeafDistribution::Gaussian { mean, .. } => *mean = v,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
        Slot::GaussLogStd { node, factor } => match &mut circuit.node_mut(node).kind {
            NodeKind::Leaf { factors } => match &mut factors[factor].1 {
                LeafDistribution::Gaussian { log_std, .. } => *log_std = v,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_random_structure, StructureConfig};
    use crate::schema::{VarKind, VariableSchema};

    #[test]
    fn flatten_write_back_round_trips() {
        let schema = VariableSchema::new(vec![
            ("a".into(), VarKind::Discrete { cardinality: 3 }),
            ("x".into(), VarKind::Continuous),
            ("b".into(), VarKind::Discrete { cardinality: 2 }),
        ])
        .unwrap();
        let mut circuit = build_random_structure(
            &schema,
            &StructureConfig { depth: 2, inputs: 2, sums: 2, replicas: 2, seed: 5 },
        )
        .unwrap();
        let view = ParameterView::new(&circuit);
        assert!(view.len() > 0);
        let theta = view.flatten(&circuit);
        let shifted: Vec<f64> = theta.iter().map(|t| t + 1.5).collect();
        view.write_back(&mut circuit, &shifted);
        let back = view.flatten(&circuit);
        assert_eq!(back, shifted);
    }
}
