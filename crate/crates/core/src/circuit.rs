//! Circuit data model, random structure generation, and structural validation.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{PcError, Result};
use crate::numeric;
use crate::schema::{VarKind, VariableSchema};

pub type NodeId = usize;

/// A univariate leaf distribution. Categorical probabilities are the softmax
/// of the stored logits; the Gaussian standard deviation is exp(log_std), so
/// both stay valid under unconstrained gradient steps.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafDistribution {
    Categorical { logits: Vec<f64> },
    Gaussian { mean: f64, log_std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Sum {
        children: Vec<NodeId>,
        log_weights: Vec<f64>,
    },
    Product {
        children: Vec<NodeId>,
    },
    /// A fully factorized distribution over the node's scope: exactly one
    /// univariate factor per scope variable.
    Leaf {
        factors: Vec<(usize, LeafDistribution)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    /// Variable indices this node's distribution ranges over, sorted ascending.
    pub scope: Vec<usize>,
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match &self.kind {
            NodeKind::Sum { children, .. } => children,
            NodeKind::Product { children } => children,
            NodeKind::Leaf { .. } => &[],
        }
    }
}

/// A probabilistic circuit: a rooted DAG of sum, product, and leaf nodes over
/// a variable schema. Structure is immutable after construction; parameters
/// (sum logits, leaf parameters) may be rewritten in place.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    schema: VariableSchema,
    nodes: Vec<Node>,
    root: NodeId,
}

impl Circuit {
    /// Assembles a circuit without checking structural invariants; use
    /// [`validate`] to obtain a violation report.
    pub fn new(schema: VariableSchema, nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        if root >= nodes.len() {
            return Err(PcError::InvalidConstraint(format!(
                "root id {root} out of bounds for {} nodes",
                nodes.len()
            )));
        }
        Ok(Self {
            schema,
            nodes,
            root,
        })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Nodes reachable from the root in a child-before-parent order.
    /// Fails if the reachable subgraph contains a cycle.
    pub fn eval_order(&self) -> Result<Vec<NodeId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Grey,
            Black,
        }
        let mut color = vec![Color::White; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        // Iterative DFS; (node, next child index) frames.
        let mut stack = vec![(self.root, 0usize)];
        color[self.root] = Color::Grey;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = self.nodes[id].children();
            if *next < children.len() {
                let child = children[*next];
                *next += 1;
                if child >= self.nodes.len() {
                    // Out-of-bounds child; reported by validate, fatal here.
                    return Err(PcError::InvalidConstraint(format!(
                        "node {id} references missing child {child}"
                    )));
                }
                match color[child] {
                    Color::White => {
                        color[child] = Color::Grey;
                        stack.push((child, 0));
                    }
                    Color::Grey => return Err(PcError::CyclicCircuit { node: child }),
                    Color::Black => {}
                }
            } else {
                color[id] = Color::Black;
                order.push(id);
                stack.pop();
            }
        }
        Ok(order)
    }
}

/// Structural hyperparameters for random circuit generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureConfig {
    /// Maximum depth of recursive scope splits (D).
    pub depth: usize,
    /// Leaf nodes per terminal region (I).
    pub inputs: usize,
    /// Sum nodes per internal region (S).
    pub sums: usize,
    /// Independent region trees mixed at the root (R).
    pub replicas: usize,
    pub seed: u64,
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.inputs < 1 || self.sums < 1 || self.replicas < 1 {
            return Err(PcError::InvalidConfig(
                "structure counts depth/inputs/sums/replicas must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

struct Builder<'s> {
    schema: &'s VariableSchema,
    cfg: StructureConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl<'s> Builder<'s> {
    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn fresh_leaf_distribution(&mut self, var: usize) -> LeafDistribution {
        match self.schema.var(var).kind {
            VarKind::Discrete { cardinality } => {
                let logits = (0..cardinality)
                    .map(|_| 0.1 * standard_normal(&mut self.rng))
                    .collect();
                LeafDistribution::Categorical { logits }
            }
            VarKind::Continuous => LeafDistribution::Gaussian {
                mean: standard_normal(&mut self.rng),
                log_std: 0.0,
            },
        }
    }

    fn sum_logits(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| 0.1 * standard_normal(&mut self.rng)).collect()
    }

    /// Builds a region over `scope`, returning the region's node vector:
    /// I leaves when terminal, S sums otherwise.
    fn region(&mut self, scope: &[usize], depth_left: usize) -> Vec<NodeId> {
        if scope.len() == 1 || depth_left == 0 {
            return (0..self.cfg.inputs)
                .map(|_| {
                    let factors = scope
                        .iter()
                        .map(|&v| (v, self.fresh_leaf_distribution(v)))
                        .collect();
                    self.push(Node {
                        kind: NodeKind::Leaf { factors },
                        scope: scope.to_vec(),
                    })
                })
                .collect();
        }

        // Uniformly random balanced bipartition; halves differ by at most one.
        let mut shuffled = scope.to_vec();
        shuffled.shuffle(&mut self.rng);
        let cut = shuffled.len().div_ceil(2);
        let mut left: Vec<usize> = shuffled[..cut].to_vec();
        let mut right: Vec<usize> = shuffled[cut..].to_vec();
        left.sort_unstable();
        right.sort_unstable();

        let left_nodes = self.region(&left, depth_left - 1);
        let right_nodes = self.region(&right, depth_left - 1);

        // Cross product of the child regions' node vectors. Products get
        // consecutive ids so that sum children form a contiguous run.
        let mut products = Vec::with_capacity(left_nodes.len() * right_nodes.len());
        for &l in &left_nodes {
            for &r in &right_nodes {
                products.push(self.push(Node {
                    kind: NodeKind::Product { children: vec![l, r] },
                    scope: scope.to_vec(),
                }));
            }
        }

        (0..self.cfg.sums)
            .map(|_| {
                let log_weights = self.sum_logits(products.len());
                self.push(Node {
                    kind: NodeKind::Sum {
                        children: products.clone(),
                        log_weights,
                    },
                    scope: scope.to_vec(),
                })
            })
            .collect()
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Generates a random circuit: R independent region trees over balanced random
/// scope splits to depth D, I factorized leaves per terminal region, S sums per
/// internal region, partition products as the cross product of child-region
/// nodes, and one root sum mixing every replica's top nodes. Deterministic in
/// (schema, config).
pub fn build_random_structure(
    schema: &VariableSchema,
    config: &StructureConfig,
) -> Result<Circuit> {
    config.validate()?;
    if schema.is_empty() {
        return Err(PcError::InvalidSchema("schema has no variables".into()));
    }
    let full_scope: Vec<usize> = (0..schema.len()).collect();
    let mut b = Builder {
        schema,
        cfg: *config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        nodes: Vec::new(),
    };

    let mut tops = Vec::new();
    for _ in 0..config.replicas {
        tops.extend(b.region(&full_scope, config.depth));
    }

    let root = if tops.len() == 1 {
        tops[0]
    } else {
        let log_weights = b.sum_logits(tops.len());
        b.push(Node {
            kind: NodeKind::Sum {
                children: tops,
                log_weights,
            },
            scope: full_scope,
        })
    };

    Circuit::new(schema.clone(), b.nodes, root)
}

/// One structural defect found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Smoothness { sum: NodeId, child: NodeId },
    Decomposability { product: NodeId, a: NodeId, b: NodeId },
    ProductScopeMismatch { product: NodeId },
    SumArity { sum: NodeId },
    WeightsNotNormalized { sum: NodeId, deviation: f64 },
    LeafFactorMismatch { leaf: NodeId },
    LeafDistributionInvalid { leaf: NodeId, var: usize, reason: String },
    RootScopeIncomplete,
    Unreachable { node: NodeId },
    Cycle { node: NodeId },
    MissingChild { node: NodeId, child: NodeId },
    BadScope { node: NodeId },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Smoothness { sum, child } => {
                write!(f, "smoothness: child {child} of sum {sum} has a different scope")
            }
            Violation::Decomposability { product, a, b } => write!(
                f,
                "decomposability: children {a} and {b} of product {product} have overlapping scopes"
            ),
            Violation::ProductScopeMismatch { product } => write!(
                f,
                "product {product} scope differs from the union of its children's scopes"
            ),
            Violation::SumArity { sum } => {
                write!(f, "sum {sum} needs matching, non-empty children and weights")
            }
            Violation::WeightsNotNormalized { sum, deviation } => write!(
                f,
                "sum {sum} softmax weights deviate from 1 by {deviation:e}"
            ),
            Violation::LeafFactorMismatch { leaf } => write!(
                f,
                "leaf {leaf} factors do not cover its scope exactly once per variable"
            ),
            Violation::LeafDistributionInvalid { leaf, var, reason } => {
                write!(f, "leaf {leaf} factor on variable {var}: {reason}")
            }
            Violation::RootScopeIncomplete => {
                write!(f, "root scope does not cover the full variable set")
            }
            Violation::Unreachable { node } => write!(f, "node {node} is unreachable from the root"),
            Violation::Cycle { node } => write!(f, "cycle through node {node}"),
            Violation::MissingChild { node, child } => {
                write!(f, "node {node} references missing child {child}")
            }
            Violation::BadScope { node } => {
                write!(f, "node {node} scope is unsorted, duplicated, or out of range")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            writeln!(f, "valid")
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Checks every circuit invariant: scope sanity, smoothness, decomposability,
/// leaf coverage, weight normalization, acyclicity, and reachability.
/// Violations are data, not errors; an empty report means the circuit is valid.
pub fn validate(circuit: &Circuit) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = circuit.num_nodes();
    let d = circuit.schema().len();

    for id in 0..n {
        let node = circuit.node(id);

        let scope_ok = !node.scope.is_empty()
            && node.scope.windows(2).all(|w| w[0] < w[1])
            && node.scope.iter().all(|&v| v < d);
        if !scope_ok {
            report.violations.push(Violation::BadScope { node: id });
        }

        for &c in node.children() {
            if c >= n {
                report
                    .violations
                    .push(Violation::MissingChild { node: id, child: c });
            }
        }

        match &node.kind {
            NodeKind::Sum {
                children,
                log_weights,
            } => {
                if children.is_empty() || children.len() != log_weights.len() {
                    report.violations.push(Violation::SumArity { sum: id });
                } else {
                    let probs = numeric::softmax(log_weights);
                    let total: f64 = probs.iter().sum();
                    let deviation = (total - 1.0).abs();
                    if !(deviation <= 1e-12) {
                        report
                            .violations
                            .push(Violation::WeightsNotNormalized { sum: id, deviation });
                    }
                }
                for &c in children {
                    if c < n && circuit.node(c).scope != node.scope {
                        report
                            .violations
                            .push(Violation::Smoothness { sum: id, child: c });
                    }
                }
            }
            NodeKind::Product { children } => {
                let in_bounds: Vec<NodeId> =
                    children.iter().copied().filter(|&c| c < n).collect();
                for (ai, &a) in in_bounds.iter().enumerate() {
                    for &b in &in_bounds[ai + 1..] {
                        if scopes_overlap(&circuit.node(a).scope, &circuit.node(b).scope) {
                            report
                                .violations
                                .push(Violation::Decomposability { product: id, a, b });
                        }
                    }
                }
                let mut union: Vec<usize> = in_bounds
                    .iter()
                    .flat_map(|&c| circuit.node(c).scope.iter().copied())
                    .collect();
                union.sort_unstable();
                union.dedup();
                if union != node.scope {
                    report
                        .violations
                        .push(Violation::ProductScopeMismatch { product: id });
                }
            }
            NodeKind::Leaf { factors } => {
                let mut factor_vars: Vec<usize> = factors.iter().map(|(v, _)| *v).collect();
                factor_vars.sort_unstable();
                let mut deduped = factor_vars.clone();
                deduped.dedup();
                if factor_vars != node.scope || deduped.len() != factor_vars.len() {
                    report
                        .violations
                        .push(Violation::LeafFactorMismatch { leaf: id });
                }
                for (var, dist) in factors {
                    if *var >= d {
                        continue; // covered by BadScope / factor mismatch
                    }
                    if let Some(reason) = leaf_distribution_problem(circuit.schema(), *var, dist) {
                        report.violations.push(Violation::LeafDistributionInvalid {
                            leaf: id,
                            var: *var,
                            reason,
                        });
                    }
                }
            }
        }
    }

    let full: Vec<usize> = (0..d).collect();
    if circuit.node(circuit.root()).scope != full {
        report.violations.push(Violation::RootScopeIncomplete);
    }

    match circuit.eval_order() {
        Ok(order) => {
            let mut reachable = vec![false; n];
            for &id in &order {
                reachable[id] = true;
            }
            for (id, r) in reachable.iter().enumerate() {
                if !r {
                    report.violations.push(Violation::Unreachable { node: id });
                }
            }
        }
        Err(PcError::CyclicCircuit { node }) => {
            report.violations.push(Violation::Cycle { node });
        }
        Err(_) => {} // missing children already reported
    }

    report
}

fn scopes_overlap(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

fn leaf_distribution_problem(
    schema: &VariableSchema,
    var: usize,
    dist: &LeafDistribution,
) -> Option<String> {
    match (schema.cardinality(var), dist) {
        (Some(card), LeafDistribution::Categorical { logits }) => {
            if logits.len() != card {
                return Some(format!(
                    "categorical has {} logits, variable cardinality is {card}",
                    logits.len()
                ));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Some("non-finite logit".into());
            }
            let total: f64 = numeric::softmax(logits).iter().sum();
            if !((total - 1.0).abs() <= 1e-12) {
                return Some(format!("probabilities sum to {total}, not 1"));
            }
            None
        }
        (None, LeafDistribution::Gaussian { mean, log_std }) => {
            if !mean.is_finite() || !log_std.is_finite() {
                return Some("non-finite Gaussian parameter".into());
            }
            None
        }
        (Some(_), LeafDistribution::Gaussian { .. }) => {
            Some("Gaussian factor on a discrete variable".into())
        }
        (None, LeafDistribution::Categorical { .. }) => {
            Some("categorical factor on a continuous variable".into())
        }
    }
}
