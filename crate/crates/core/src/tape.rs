//! Reverse-mode automatic differentiation over a scalar tape.
//!
//! Values are computed eagerly as operations are recorded, so control flow
//! (e.g. rejecting conditioning on a null event) can inspect intermediate
//! results. The reverse pass walks the tape once, so its cost is linear in
//! tape length. Inputs must be registered first; their tape indices double as
//! the flat parameter indices used by gradients.

use crate::error::{PcError, Result};

/// Index of a recorded scalar on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) u32);

impl VarId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Position marker for [`Tape::rewind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mark(usize);

impl Mark {
    pub fn index(self) -> usize {
        self.0
    }
}

const TWO_OVER_SQRT_PI: f64 = 1.128379167095512573896158903122;

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Erf(u32),
    Erfc(u32),
    Abs(u32),
    Max0(u32),
    /// max(x, c): clamp from below by a constant.
    MaxConst(u32, f64),
    /// c * x
    Scale(u32, f64),
    /// x + c; the constant only matters at record time.
    Shift(u32),
    /// Σ x_i over the contiguous entries [start, start+len).
    SumRun { start: u32, len: u32 },
    /// log Σ exp(x_i) over the contiguous entries [start, start+len).
    LseRun { start: u32, len: u32 },
    /// log Σ exp(w_i + c_i) over two contiguous runs of equal length.
    /// The workhorse of sum-node evaluation. Softmax coefficients are cached
    /// at `cache` during the forward pass so the reverse pass avoids
    /// recomputing one exp per summand.
    WeightedLse { w: u32, c: u32, len: u32, cache: u32 },
    /// Σ over entries listed in the argument arena.
    SumArgs { args: u32, len: u32 },
    /// log Σ exp over entries listed in the argument arena.
    LseArgs { args: u32, len: u32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Erf(..) => "erf",
            Op::Erfc(..) => "erfc",
            Op::Abs(..) => "abs",
            Op::Max0(..) => "max0",
            Op::MaxConst(..) => "max_const",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::SumRun { .. } => "sum_run",
            Op::LseRun { .. } => "log_sum_exp",
            Op::WeightedLse { .. } => "weighted_log_sum_exp",
            Op::SumArgs { .. } => "sum",
            Op::LseArgs { .. } => "log_sum_exp",
        }
    }
}

/// Topologically ordered record of primitive operations with eager values.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<f64>,
    args: Vec<u32>,
    cache: Vec<f64>,
    n_inputs: usize,
    inputs_closed: bool,
    nonfinite: Option<(usize, &'static str)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            vals: Vec::new(),
            args: Vec::new(),
            cache: Vec::new(),
            n_inputs: 0,
            inputs_closed: false,
            nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.n_inputs
    }

    #[inline]
    pub fn value(&self, id: VarId) -> f64 {
        self.vals[id.index()]
    }

    fn push(&mut self, op: Op, val: f64) -> VarId {
        if self.nonfinite.is_none() && !val.is_finite() {
            self.nonfinite = Some((self.ops.len(), op.name()));
        }
        self.ops.push(op);
        self.vals.push(val);
        VarId((self.ops.len() - 1) as u32)
    }

    /// Registers a differentiable input. All inputs must precede other ops so
    /// input slot i is tape entry i.
    pub fn input(&mut self, value: f64) -> VarId {
        assert!(
            !self.inputs_closed,
            "inputs must be registered before any other operation"
        );
        self.n_inputs += 1;
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: f64) -> VarId {
        self.inputs_closed = true;
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()] + self.vals[b.index()];
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()] - self.vals[b.index()];
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()] * self.vals[b.index()];
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = -self.vals[a.index()];
        self.push(Op::Neg(a.0), v)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()].exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()].ln();
        self.push(Op::Ln(a.0), v)
    }

    pub fn erf(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = libm::erf(self.vals[a.index()]);
        self.push(Op::Erf(a.0), v)
    }

    pub fn erfc(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = libm::erfc(self.vals[a.index()]);
        self.push(Op::Erfc(a.0), v)
    }

    /// |x| with subgradient sign(x), 0 at x = 0.
    pub fn abs(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()].abs();
        self.push(Op::Abs(a.0), v)
    }

    /// max(0, x) with derivative 0 at the kink.
    pub fn max0(&mut self, a: VarId) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()].max(0.0);
        self.push(Op::Max0(a.0), v)
    }

    pub fn max_const(&mut self, a: VarId, c: f64) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()].max(c);
        self.push(Op::MaxConst(a.0, c), v)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()] * c;
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn shift(&mut self, a: VarId, c: f64) -> VarId {
        self.inputs_closed = true;
        let v = self.vals[a.index()] + c;
        self.push(Op::Shift(a.0), v)
    }

    /// Σ over the contiguous entries starting at `start`.
    pub fn sum_run(&mut self, start: VarId, len: usize) -> VarId {
        self.inputs_closed = true;
        let s = start.index();
        let v = self.vals[s..s + len].iter().sum();
        self.push(
            Op::SumRun {
                start: start.0,
                len: len as u32,
            },
            v,
        )
    }

    /// log Σ exp over the contiguous entries starting at `start`.
    pub fn lse_run(&mut self, start: VarId, len: usize) -> VarId {
        self.inputs_closed = true;
        let s = start.index();
        let v = crate::numeric::log_sum_exp(&self.vals[s..s + len]);
        self.push(
            Op::LseRun {
                start: start.0,
                len: len as u32,
            },
            v,
        )
    }

    /// log Σ_j exp(w_j + c_j) over two contiguous runs of length `len`.
    pub fn weighted_lse(&mut self, w: VarId, c: VarId, len: usize) -> VarId {
        self.inputs_closed = true;
        let (ws, cs) = (w.index(), c.index());
        let mut hi = f64::NEG_INFINITY;
        for j in 0..len {
            let t = self.vals[ws + j] + self.vals[cs + j];
            if t > hi {
                hi = t;
            }
        }
        let cache = self.cache.len() as u32;
        let v = if hi == f64::NEG_INFINITY {
            self.cache.extend(std::iter::repeat_n(0.0, len));
            f64::NEG_INFINITY
        } else {
            let mut acc = 0.0;
            for j in 0..len {
                let term = (self.vals[ws + j] + self.vals[cs + j] - hi).exp();
                self.cache.push(term);
                acc += term;
            }
            let inv = 1.0 / acc;
            for slot in &mut self.cache[cache as usize..] {
                *slot *= inv;
            }
            hi + acc.ln()
        };
        self.push(
            Op::WeightedLse {
                w: w.0,
                c: c.0,
                len: len as u32,
                cache,
            },
            v,
        )
    }

    /// Σ over an explicit list of entries.
    pub fn sum_args(&mut self, ids: &[VarId]) -> VarId {
        self.inputs_closed = true;
        let start = self.args.len() as u32;
        self.args.extend(ids.iter().map(|id| id.0));
        let v = ids.iter().map(|id| self.vals[id.index()]).sum();
        self.push(
            Op::SumArgs {
                args: start,
                len: ids.len() as u32,
            },
            v,
        )
    }

    /// log Σ exp over an explicit list of entries.
    pub fn lse_args(&mut self, ids: &[VarId]) -> VarId {
        self.inputs_closed = true;
        let start = self.args.len() as u32;
        self.args.extend(ids.iter().map(|id| id.0));
        let mut hi = f64::NEG_INFINITY;
        for id in ids {
            let x = self.vals[id.index()];
            if x > hi {
                hi = x;
            }
        }
        let v = if hi == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let mut acc = 0.0;
            for id in ids {
                acc += (self.vals[id.index()] - hi).exp();
            }
            hi + acc.ln()
        };
        self.push(
            Op::LseArgs {
                args: start,
                len: ids.len() as u32,
            },
            v,
        )
    }

    pub fn mark(&self) -> Mark {
        Mark(self.ops.len())
    }

    /// Discards every entry recorded at or after `mark`. Arena arguments for
    /// discarded ops are dropped as well.
    pub fn rewind(&mut self, mark: Mark) {
        debug_assert!(mark.0 >= self.n_inputs || mark.0 == 0);
        // Find the lowest arena offsets used by dropped ops so the arenas can
        // shrink in step with the op list.
        let mut arena_cut = self.args.len();
        let mut cache_cut = self.cache.len();
        for op in &self.ops[mark.0..] {
            match op {
                Op::SumArgs { args, .. } | Op::LseArgs { args, .. } => {
                    arena_cut = arena_cut.min(*args as usize);
                }
                Op::WeightedLse { cache, .. } => {
                    cache_cut = cache_cut.min(*cache as usize);
                }
                _ => {}
            }
        }
        self.args.truncate(arena_cut);
        self.cache.truncate(cache_cut);
        self.ops.truncate(mark.0);
        self.vals.truncate(mark.0);
        if let Some((idx, _)) = self.nonfinite {
            if idx >= mark.0 {
                self.nonfinite = None;
            }
        }
        if mark.0 <= self.n_inputs {
            self.inputs_closed = false;
        }
    }

    /// Overwrites the value of an input slot. Only meaningful before the ops
    /// that consume it are re-recorded.
    pub fn set_input(&mut self, id: VarId, value: f64) {
        debug_assert!(id.index() < self.n_inputs);
        self.vals[id.index()] = value;
    }

    fn check_finite(&self) -> Result<()> {
        if let Some((index, primitive)) = self.nonfinite {
            return Err(PcError::NonFinite { primitive, index });
        }
        Ok(())
    }

    /// Reverse pass over the whole tape: d objective / d input_i for every
    /// registered input. Entries the objective does not depend on get exactly
    /// zero. Each tape entry is visited exactly once.
    pub fn gradient(&self, objective: VarId) -> Result<Vec<f64>> {
        self.check_finite()?;
        let mut adjoints = vec![0.0; self.ops.len()];
        adjoints[objective.index()] = 1.0;
        self.backward_range(0, self.ops.len(), &mut adjoints);
        adjoints.truncate(self.n_inputs);
        Ok(adjoints)
    }

    /// Seeds `objective` with `seed` and runs the reverse pass over entries in
    /// [from, len). Adjoints for entries below `from` accumulate without being
    /// propagated further; call [`Tape::backward_head`] once afterwards.
    /// `adjoints` is resized to the tape and its tail (from..) zeroed here.
    pub fn backward_tail(&mut self, objective: VarId, seed: f64, from: Mark, adjoints: &mut Vec<f64>) -> Result<()> {
        self.check_finite()?;
        if adjoints.len() < self.ops.len() {
            adjoints.resize(self.ops.len(), 0.0);
        }
        for a in adjoints[from.0..self.ops.len()].iter_mut() {
            *a = 0.0;
        }
        adjoints[objective.index()] += seed;
        self.backward_range(from.0, self.ops.len(), adjoints);
        Ok(())
    }

    /// Propagates accumulated adjoints through entries below `upto`.
    pub fn backward_head(&self, upto: Mark, adjoints: &mut [f64]) {
        self.backward_range(0, upto.0.min(self.ops.len()), adjoints);
    }

    fn backward_range(&self, from: usize, to: usize, adj: &mut [f64]) {
        for i in (from..to).rev() {
            let go = adj[i];
            if go == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a as usize] += go;
                    adj[b as usize] += go;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += go;
                    adj[b as usize] -= go;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += go * self.vals[b as usize];
                    adj[b as usize] += go * self.vals[a as usize];
                }
                Op::Neg(a) => adj[a as usize] -= go,
                Op::Exp(a) => adj[a as usize] += go * self.vals[i],
                Op::Ln(a) => adj[a as usize] += go / self.vals[a as usize],
                Op::Erf(a) => {
                    let x = self.vals[a as usize];
                    adj[a as usize] += go * TWO_OVER_SQRT_PI * (-x * x).exp();
                }
                Op::Erfc(a) => {
                    let x = self.vals[a as usize];
                    adj[a as usize] -= go * TWO_OVER_SQRT_PI * (-x * x).exp();
                }
                Op::Abs(a) => {
                    let x = self.vals[a as usize];
                    // sign(0) = 0 by convention
                    adj[a as usize] += go * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                }
                Op::Max0(a) => {
                    if self.vals[a as usize] > 0.0 {
                        adj[a as usize] += go;
                    }
                }
                Op::MaxConst(a, c) => {
                    if self.vals[a as usize] > c {
                        adj[a as usize] += go;
                    }
                }
                Op::Scale(a, c) => adj[a as usize] += go * c,
                Op::Shift(a) => adj[a as usize] += go,
                Op::SumRun { start, len } => {
                    for j in start as usize..(start + len) as usize {
                        adj[j] += go;
                    }
                }
                Op::LseRun { start, len } => {
                    let out = self.vals[i];
                    for j in start as usize..(start + len) as usize {
                        adj[j] += go * (self.vals[j] - out).exp();
                    }
                }
                Op::WeightedLse { w, c, len, cache } => {
                    for j in 0..len as usize {
                        let contribution = go * self.cache[cache as usize + j];
                        adj[w as usize + j] += contribution;
                        adj[c as usize + j] += contribution;
                    }
                }
                Op::SumArgs { args, len } => {
                    for k in args as usize..(args + len) as usize {
                        adj[self.args[k] as usize] += go;
                    }
                }
                Op::LseArgs { args, len } => {
                    let out = self.vals[i];
                    for k in args as usize..(args + len) as usize {
                        let j = self.args[k] as usize;
                        adj[j] += go * (self.vals[j] - out).exp();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
        (0..at.len())
            .map(|i| {
                let mut hi = at.to_vec();
                let mut lo = at.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    }

    /// Builds a messy expression exercising every differentiable primitive.
    fn expression(tape: &mut Tape, xs: &[VarId]) -> VarId {
        let a = tape.add(xs[0], xs[1]);
        let b = tape.mul(a, xs[2]);
        let c = tape.exp(xs[1]);
        let d = tape.shift(c, 2.0);
        let e = tape.ln(d);
        let f = tape.erf(xs[0]);
        let g = tape.erfc(xs[2]);
        let h = tape.abs(xs[3]);
        let i = tape.max0(b);
        let j = tape.scale(e, 0.7);
        let k = tape.sub(f, g);
        let l = tape.neg(h);
        let parts = tape.sum_args(&[i, j, k, l]);
        let run0 = tape.add(parts, xs[0]);
        let _run1 = tape.add(parts, xs[1]);
        let _run2 = tape.mul(parts, xs[2]);
        let lse = tape.lse_run(run0, 3);
        let wl = tape.weighted_lse(xs[0], xs[1], 3); // runs over inputs 0..3 and 1..4
        let both = tape.lse_args(&[lse, wl]);
        tape.max_const(both, -1.0)
    }

    fn eval_plain(at: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let xs: Vec<VarId> = at.iter().map(|&v| tape.input(v)).collect();
        let out = expression(&mut tape, &xs);
        tape.value(out)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let at = [0.3, -0.4, 0.9, 0.6, -0.2];
        let mut tape = Tape::new();
        let xs: Vec<VarId> = at.iter().map(|&v| tape.input(v)).collect();
        let out = expression(&mut tape, &xs);
        let analytic = tape.gradient(out).unwrap();
        let numeric = numeric_grad(eval_plain, &at, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(
                (a - n).abs() / a.abs().max(1e-8) < 1e-6,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn gradient_is_linear() {
        let mut tape = Tape::new();
        let x = tape.input(0.7);
        let y = tape.input(-0.3);
        let u = tape.mul(x, y);
        let v = tape.exp(x);
        let u2 = tape.scale(u, 2.5);
        let v3 = tape.scale(v, -3.0);
        let combined = tape.add(u2, v3);

        let gu = tape.gradient(u).unwrap();
        let gv = tape.gradient(v).unwrap();
        let gc = tape.gradient(combined).unwrap();
        for i in 0..2 {
            assert!((gc[i] - (2.5 * gu[i] - 3.0 * gv[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn untouched_inputs_get_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.input(1.0);
        let unused = tape.input(5.0);
        let y = tape.exp(x);
        let g = tape.gradient(y).unwrap();
        assert_eq!(g[unused.index()], 0.0);
    }

    #[test]
    fn tail_plus_head_equals_full_backward() {
        let build = |tape: &mut Tape| -> (Vec<VarId>, Mark) {
            let xs = vec![tape.input(0.2), tape.input(1.3)];
            let shared = tape.mul(xs[0], xs[1]); // "prelude"
            (vec![xs[0], xs[1], shared], tape.mark())
        };

        let mut t1 = Tape::new();
        let (ids1, mark) = build(&mut t1);
        let p1 = t1.exp(ids1[2]);
        let p2 = t1.ln(ids1[2]);
        let obj = t1.add(p1, p2);
        let full = t1.gradient(obj).unwrap();

        let mut t2 = Tape::new();
        let (ids2, mark2) = build(&mut t2);
        assert_eq!(mark, mark2);
        let mut adj = Vec::new();
        let q1 = t2.exp(ids2[2]);
        t2.backward_tail(q1, 1.0, mark2, &mut adj).unwrap();
        t2.rewind(mark2);
        let q2 = t2.ln(ids2[2]);
        t2.backward_tail(q2, 1.0, mark2, &mut adj).unwrap();
        t2.backward_head(mark2, &mut adj);
        for i in 0..2 {
            assert!((full[i] - adj[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn nonfinite_value_is_diagnosed_with_primitive_name() {
        let mut tape = Tape::new();
        let x = tape.input(-1.0);
        let y = tape.ln(x); // NaN
        let err = tape.gradient(y).unwrap_err();
        match err {
            PcError::NonFinite { primitive, .. } => assert_eq!(primitive, "ln"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rewind_drops_entries_and_arena() {
        let mut tape = Tape::new();
        let x = tape.input(0.5);
        let base = tape.mark();
        let a = tape.exp(x);
        let _ = tape.sum_args(&[a, x]);
        assert_eq!(tape.len(), 3);
        tape.rewind(base);
        assert_eq!(tape.len(), 1);
        let b = tape.ln(x);
        let g = tape.gradient(b).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
    }
}
