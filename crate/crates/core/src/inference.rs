//! Exact log-space inference: densities, event probabilities, conditionals,
//! and ancestral sampling. All query operations are read-only on the circuit.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Circuit, LeafDistribution, NodeId, NodeKind};
use crate::error::Result;
use crate::events::Event;
use crate::numeric;
use crate::recorder::Evaluator;
use crate::schema::{Row, Value};

/// log P(X = x) for a complete assignment, computed bottom-up in log space.
pub fn log_density(circuit: &Circuit, row: &[Value]) -> Result<f64> {
    Evaluator::new(circuit)?.log_density(row)
}

/// log P(e) for a per-variable conjunctive event. Equality atoms evaluate the
/// leaf mass/density, at-most atoms the leaf CDF, and unconstrained variables
/// marginalize to log 1 = 0; the sum/product graph is unchanged.
pub fn log_event_prob(circuit: &Circuit, event: &Event) -> Result<f64> {
    Evaluator::new(circuit)?.log_event_prob(event)
}

/// P(f | g) = exp(log P(f ∧ g) − log P(g)), clamped to [0, 1].
pub fn conditional_prob(circuit: &Circuit, f: &Event, g: &Event) -> Result<f64> {
    Evaluator::new(circuit)?.conditional_prob(f, g)
}

/// Ancestral top-down sampling: sums pick one child with softmax-weight
/// probabilities, products descend all children, leaves draw each univariate
/// factor. Deterministic given the seed.
pub fn sample(circuit: &Circuit, n: usize, seed: u64) -> Result<Vec<Row>> {
    let order = circuit.eval_order()?; // validates reachable subgraph is acyclic
    drop(order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-sum child selection distributions, computed once.
    let mut sum_probs: Vec<Option<Vec<f64>>> = vec![None; circuit.num_nodes()];
    for id in 0..circuit.num_nodes() {
        if let NodeKind::Sum { log_weights, .. } = &circuit.node(id).kind {
            sum_probs[id] = Some(numeric::softmax(log_weights));
        }
    }

    let d = circuit.schema().len();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<Option<Value>> = vec![None; d];
        descend(circuit, circuit.root(), &sum_probs, &mut row, &mut rng);
        rows.push(
            row.into_iter()
                .map(|v| v.expect("root scope covers all variables"))
                .collect(),
        );
    }
    Ok(rows)
}

fn descend(
    circuit: &Circuit,
    id: NodeId,
    sum_probs: &[Option<Vec<f64>>],
    row: &mut [Option<Value>],
    rng: &mut ChaCha8Rng,
) {
    match &circuit.node(id).kind {
        NodeKind::Sum { children, .. } => {
            let probs = sum_probs[id].as_ref().expect("sum probs precomputed");
            let dist = rand::distr::weighted::WeightedIndex::new(probs)
                .expect("softmax weights are positive");
            let pick = children[dist.sample(rng)];
            descend(circuit, pick, sum_probs, row, rng);
        }
        NodeKind::Product { children } => {
            for &c in children {
                descend(circuit, c, sum_probs, row, rng);
            }
        }
        NodeKind::Leaf { factors } => {
            for (var, dist) in factors {
                row[*var] = Some(draw_factor(dist, rng));
            }
        }
    }
}

fn draw_factor(dist: &LeafDistribution, rng: &mut ChaCha8Rng) -> Value {
    match dist {
        LeafDistribution::Categorical { logits } => {
            let probs = numeric::softmax(logits);
            let dist = rand::distr::weighted::WeightedIndex::new(&probs)
                .expect("softmax probabilities are positive");
            Value::Discrete(dist.sample(rng))
        }
        LeafDistribution::Gaussian { mean, log_std } => {
            let std = log_std.exp();
            let normal = rand_distr::Normal::new(*mean, std).expect("finite parameters");
            Value::Continuous(normal.sample(rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_random_structure, Node, StructureConfig};
    use crate::events::{Atom, Relation};
    use crate::schema::{VarKind, VariableSchema};

    fn leaf(var: usize, logits: Vec<f64>) -> Node {
        Node {
            kind: NodeKind::Leaf {
                factors: vec![(var, LeafDistribution::Categorical { logits })],
            },
            scope: vec![var],
        }
    }

    fn single_leaf_circuit(logits: Vec<f64>) -> Circuit {
        let schema = VariableSchema::new(vec![(
            "x".into(),
            VarKind::Discrete { cardinality: logits.len() },
        )])
        .unwrap();
        Circuit::new(schema, vec![leaf(0, logits)], 0).unwrap()
    }

    fn random_binary(num_vars: usize, seed: u64) -> Circuit {
        let names: Vec<String> = (0..num_vars).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let schema = VariableSchema::binary(&refs).unwrap();
        build_random_structure(
            &schema,
            &StructureConfig { depth: 2, inputs: 2, sums: 2, replicas: 2, seed },
        )
        .unwrap()
    }

    /// Brute-force enumeration of all assignments of an all-binary circuit.
    fn enumerate_density(circuit: &Circuit) -> Vec<(Vec<Value>, f64)> {
        let d = circuit.schema().len();
        let mut out = Vec::with_capacity(1 << d);
        for bits in 0..(1usize << d) {
            let row: Vec<Value> = (0..d).map(|i| Value::Discrete((bits >> i) & 1)).collect();
            let p = log_density(circuit, &row).unwrap().exp();
            out.push((row, p));
        }
        out
    }

    #[test]
    fn uniform_categorical_leaf_density() {
        let circuit = single_leaf_circuit(vec![0.0; 4]);
        let got = log_density(&circuit, &[Value::Discrete(2)]).unwrap();
        assert!((got - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn random_circuit_density_normalizes() {
        let circuit = random_binary(3, 7);
        let total: f64 = enumerate_density(&circuit).iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn product_of_independent_leaves_adds_log_masses() {
        let schema = VariableSchema::binary(&["a", "b"]).unwrap();
        let la = vec![0.4, -0.3];
        let lb = vec![-1.0, 0.7];
        let nodes = vec![
            leaf(0, la.clone()),
            leaf(1, lb.clone()),
            Node {
                kind: NodeKind::Product { children: vec![0, 1] },
                scope: vec![0, 1],
            },
        ];
        let circuit = Circuit::new(schema, nodes, 2).unwrap();
        let log_pa = numeric::log_softmax(&la);
        let log_pb = numeric::log_softmax(&lb);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (a, b) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
            let got = log_density(&circuit, &[Value::Discrete(a), Value::Discrete(b)]).unwrap();
            assert!((got - (log_pa[a] + log_pb[b])).abs() < 1e-12);
        }
    }

    #[test]
    fn density_rejects_incomplete_or_out_of_range() {
        let circuit = random_binary(3, 1);
        assert!(log_density(&circuit, &[Value::Discrete(0)]).is_err());
        assert!(log_density(
            &circuit,
            &[Value::Discrete(0), Value::Discrete(2), Value::Discrete(0)]
        )
        .is_err());
    }

    #[test]
    fn empty_event_has_log_prob_zero() {
        for seed in [0, 5, 9] {
            let circuit = random_binary(4, seed);
            let got = log_event_prob(&circuit, &Event::everything()).unwrap();
            assert!(got.abs() < 1e-12, "log P(true) = {got}");
        }
    }

    #[test]
    fn marginal_event_matches_enumeration() {
        let circuit = random_binary(3, 13);
        let event = Event::new(vec![Atom { var: 0, relation: Relation::Equals(Value::Discrete(1)) }])
            .unwrap();
        let got = log_event_prob(&circuit, &event).unwrap().exp();
        let want: f64 = enumerate_density(&circuit)
            .iter()
            .filter(|(row, _)| row[0] == Value::Discrete(1))
            .map(|(_, p)| p)
            .sum();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn uniform_cdf_event() {
        let circuit = single_leaf_circuit(vec![0.0; 4]);
        let event = Event::new(vec![Atom { var: 0, relation: Relation::AtMost(Value::Discrete(1)) }])
            .unwrap();
        let got = log_event_prob(&circuit, &event).unwrap();
        assert!((got - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn conditional_of_event_given_itself_is_one() {
        let circuit = random_binary(4, 3);
        let g = Event::new(vec![Atom { var: 1, relation: Relation::Equals(Value::Discrete(0)) }])
            .unwrap();
        let got = conditional_prob(&circuit, &g, &g).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn conditional_matches_enumeration_ratio() {
        let circuit = random_binary(4, 21);
        let f = Event::new(vec![Atom { var: 0, relation: Relation::Equals(Value::Discrete(1)) }])
            .unwrap();
        let g = Event::new(vec![Atom { var: 1, relation: Relation::Equals(Value::Discrete(0)) }])
            .unwrap();
        let table = enumerate_density(&circuit);
        let joint: f64 = table
            .iter()
            .filter(|(row, _)| row[0] == Value::Discrete(1) && row[1] == Value::Discrete(0))
            .map(|(_, p)| p)
            .sum();
        let marginal: f64 = table
            .iter()
            .filter(|(row, _)| row[1] == Value::Discrete(0))
            .map(|(_, p)| p)
            .sum();
        let got = conditional_prob(&circuit, &f, &g).unwrap();
        assert!((got - joint / marginal).abs() < 1e-10);
    }

    #[test]
    fn contradictory_condition_is_an_error() {
        let circuit = random_binary(3, 2);
        let f = Event::new(vec![Atom { var: 0, relation: Relation::Equals(Value::Discrete(0)) }])
            .unwrap();
        let g = Event::new(vec![Atom { var: 0, relation: Relation::Equals(Value::Discrete(1)) }])
            .unwrap();
        assert!(conditional_prob(&circuit, &f, &g).is_err());
    }

    #[test]
    fn chain_rule_holds() {
        let circuit = random_binary(5, 17);
        let f = Event::new(vec![Atom { var: 2, relation: Relation::Equals(Value::Discrete(1)) }])
            .unwrap();
        let g = Event::new(vec![
            Atom { var: 0, relation: Relation::Equals(Value::Discrete(0)) },
            Atom { var: 4, relation: Relation::AtMost(Value::Discrete(0)) },
        ])
        .unwrap();
        let cond = conditional_prob(&circuit, &f, &g).unwrap();
        let pg = log_event_prob(&circuit, &g).unwrap().exp();
        let fg = match f.and(&g).unwrap() {
            crate::events::Conjunction::Event(e) => e,
            crate::events::Conjunction::Empty => panic!("consistent by construction"),
        };
        let pfg = log_event_prob(&circuit, &fg).unwrap().exp();
        assert!((cond * pg - pfg).abs() < 1e-10);
    }

    #[test]
    fn cdf_is_monotone_in_threshold() {
        let schema = VariableSchema::new(vec![
            ("a".into(), VarKind::Discrete { cardinality: 5 }),
            ("b".into(), VarKind::Discrete { cardinality: 3 }),
        ])
        .unwrap();
        let circuit = build_random_structure(
            &schema,
            &StructureConfig { depth: 1, inputs: 3, sums: 2, replicas: 2, seed: 4 },
        )
        .unwrap();
        for var in 0..2 {
            let card = circuit.schema().cardinality(var).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for v in 0..card {
                let event = Event::new(vec![Atom {
                    var,
                    relation: Relation::AtMost(Value::Discrete(v)),
                }])
                .unwrap();
                let lp = log_event_prob(&circuit, &event).unwrap();
                assert!(lp >= prev - 1e-12, "CDF decreased at {var} <= {v}");
                prev = lp;
            }
        }
    }

    #[test]
    fn sampling_matches_uniform_leaf_frequencies() {
        let circuit = single_leaf_circuit(vec![0.0; 4]);
        let rows = sample(&circuit, 10_000, 42).unwrap();
        let mut counts = [0usize; 4];
        for row in &rows {
            counts[row[0].as_discrete().unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn near_deterministic_sum_follows_dominant_child() {
        let schema = VariableSchema::binary(&["x"]).unwrap();
        let nodes = vec![
            leaf(0, vec![50.0, 0.0]),  // nearly always category 0
            leaf(0, vec![0.0, 50.0]),  // nearly always category 1
            Node {
                kind: NodeKind::Sum {
                    children: vec![0, 1],
                    log_weights: vec![50.0, 0.0], // child 0 weight ~= 1
                },
                scope: vec![0],
            },
        ];
        let circuit = Circuit::new(schema, nodes, 2).unwrap();
        let rows = sample(&circuit, 500, 9).unwrap();
        assert!(rows.iter().all(|r| r[0] == Value::Discrete(0)));
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let circuit = random_binary(4, 11);
        let a = sample(&circuit, 100, 1234).unwrap();
        let b = sample(&circuit, 100, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_discrete_density_is_nonpositive() {
        let circuit = random_binary(4, 19);
        for (_, p) in enumerate_density(&circuit) {
            assert!(p.ln() <= 1e-12);
        }
    }
}
