//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Operations are recorded in forward order and replayed in reverse to
//! accumulate gradients. Two nodes have non-standard backward rules:
//!
//! * [`Tape::grad_reverse`] — identity forward, multiplies the upstream
//!   gradient by `-scale` on the way down;
//! * [`Tape::grad_block`] — identity forward, passes no gradient at all.
//!
//! Both are exact: a scale of zero (or a blocked branch) contributes
//! nothing to an accumulator rather than adding a literal `0.0`, so
//! degenerate configurations stay bitwise identical to graphs without the
//! extra branch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Which slice of the model a parameter belongs to. The adversary head is
/// the only non-theta group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    PremiseEncoder,
    HypothesisEncoder,
    Classifier,
    HypHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::PremiseEncoder,
        ParamGroup::HypothesisEncoder,
        ParamGroup::Classifier,
        ParamGroup::HypHead,
    ];

    /// Everything except the hypothesis-only head.
    pub fn is_theta(self) -> bool {
        self != ParamGroup::HypHead
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::PremiseEncoder => "premise_encoder",
            ParamGroup::HypothesisEncoder => "hypothesis_encoder",
            ParamGroup::Classifier => "classifier",
            ParamGroup::HypHead => "hyp_head",
        }
    }
}

/// A named trainable tensor. The group is fixed at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub id: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(id: impl Into<String>, group: ParamGroup, value: Tensor) -> Self {
        Parameter {
            id: id.into(),
            group,
            value,
        }
    }
}

/// Per-parameter gradients produced by [`Tape::backward`]. Parameters the
/// root does not reach get an exact-zero tensor.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.grads.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn insert(&mut self, id: String, grad: Tensor) {
        self.grads.insert(id, grad);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Per-example sum (or mean) of embedding rows: `out[i] = f(table[tokens[i]])`.
    EmbedBag {
        table: NodeId,
        tokens: Vec<Vec<usize>>,
        mean: bool,
    },
    /// Stack rank-1 rows into a matrix.
    StackRows { rows: Vec<NodeId> },
    /// Concatenate along the last axis.
    Concat { parts: Vec<NodeId> },
    MatMul { lhs: NodeId, rhs: NodeId },
    /// Row-broadcast bias add.
    AddBias { input: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Abs { input: NodeId },
    Tanh { input: NodeId },
    /// Log-softmax over the last axis.
    LogSoftmax { input: NodeId },
    /// `out[i] = -logprobs[i, targets[i]]`.
    NllPick { logprobs: NodeId, targets: Vec<usize> },
    Sum { input: NodeId },
    Mean { input: NodeId },
    /// Multiply by a compile-time constant.
    Scale { input: NodeId, c: f64 },
    GradReverse { input: NodeId, scale: f64 },
    GradBlock {
        #[allow(dead_code)] // kept for tape completeness; backward ignores it
        input: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// The recorded computation. Confined to one worker; independent tapes may
/// run in parallel threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(NodeId, String, ParamGroup)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient accumulated at a node by the last `backward` call, or
    /// `None` if nothing reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<f64> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[id].value.numel()],
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        id
    }

    /// Record a constant input.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Register a parameter leaf. The tape snapshots the current value; the
    /// caller applies updates to its own copy after `backward`.
    pub fn param(&mut self, p: &Parameter) -> NodeId {
        debug_assert!(
            !self.params.iter().any(|(_, id, _)| id == &p.id),
            "parameter {} registered twice",
            p.id
        );
        let node = self.push(Op::Leaf, p.value.clone());
        self.params.push((node, p.id.clone(), p.group));
        node
    }

    // ── forward ops ─────────────────────────────────────────────────

    /// Sum (`mean=false`) or mean (`mean=true`) of embedding rows per token
    /// list. Output is `[n, d]` for `n` lists.
    pub fn embed_bag(&mut self, table: NodeId, tokens: Vec<Vec<usize>>, mean: bool) -> Result<NodeId> {
        let t = self.nodes[table].value.clone();
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embed_bag",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; tokens.len() * d];
        for (i, toks) in tokens.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::Empty("token sequence"));
            }
            for &tok in toks {
                if tok >= v {
                    return Err(Error::TokenOutOfRange { index: tok, size: v });
                }
                let row = t.row(tok);
                for j in 0..d {
                    out[i * d + j] += row[j];
                }
            }
            if mean {
                let inv = 1.0 / toks.len() as f64;
                for j in 0..d {
                    out[i * d + j] *= inv;
                }
            }
        }
        let n = tokens.len();
        Ok(self.push(
            Op::EmbedBag { table, tokens, mean },
            Tensor::new(vec![n, d], out)?,
        ))
    }

    /// Stack single-row values (`[d]` or `[1, d]`) into an `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: Vec<NodeId>) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::Empty("row list"));
        }
        let d = self.nodes[rows[0]].value.numel();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            let v = &self.nodes[r].value;
            if v.rows() != 1 || v.numel() != d {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: v.shape().to_vec(),
                });
            }
            out.extend_from_slice(v.data());
        }
        let n = rows.len();
        Ok(self.push(Op::StackRows { rows }, Tensor::new(vec![n, d], out)?))
    }

    /// Concatenate along the last axis. All parts must share rank and, for
    /// matrices, the row count.
    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat parts"));
        }
        let rank = self.nodes[parts[0]].value.shape().len();
        let rows = self.nodes[parts[0]].value.rows();
        let mut total_cols = 0;
        for &p in &parts {
            let v = &self.nodes[p].value;
            if v.shape().len() != rank || v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.nodes[parts[0]].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            total_cols += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in &parts {
                out.extend_from_slice(self.nodes[p].value.row(r));
            }
        }
        let shape = if rank == 2 {
            vec![rows, total_cols]
        } else {
            vec![total_cols]
        };
        Ok(self.push(Op::Concat { parts }, Tensor::new(shape, out)?))
    }

    /// `lhs · rhs` where `lhs` is `[n, k]` (or a rank-1 `[k]`) and `rhs` is
    /// `[k, m]`.
    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (l, r) = (&self.nodes[lhs].value, &self.nodes[rhs].value);
        let l_rank = l.shape().len();
        if !(l_rank == 1 || l_rank == 2) || r.shape().len() != 2 || l.cols() != r.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: l.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let (n, k, m) = (l.rows(), l.cols(), r.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let lrow = l.row(i);
            for (kk, &a) in lrow.iter().enumerate().take(k) {
                let rrow = &r.data()[kk * m..(kk + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += a * rrow[j];
                }
            }
        }
        let shape = if l_rank == 2 { vec![n, m] } else { vec![m] };
        Ok(self.push(Op::MatMul { lhs, rhs }, Tensor::new(shape, out)?))
    }

    /// Add a rank-1 bias to every row.
    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, b) = (&self.nodes[input].value, &self.nodes[bias].value);
        if b.shape().len() != 1 || b.numel() != x.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let m = x.cols();
        let mut out = x.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b.data()[i % m];
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(Op::AddBias { input, bias }, t))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let out: Vec<f64> = x.data().iter().zip(y.data()).map(|(&u, &v)| f(u, v)).collect();
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_op("add", a, b, |u, v| u + v)?;
        Ok(self.push(Op::Add { a, b }, t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_op("sub", a, b, |u, v| u - v)?;
        Ok(self.push(Op::Sub { a, b }, t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_op("mul", a, b, |u, v| u * v)?;
        Ok(self.push(Op::Mul { a, b }, t))
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.abs()).collect()).unwrap();
        self.push(Op::Abs { input }, t)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.tanh()).collect()).unwrap();
        self.push(Op::Tanh { input }, t)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if x.shape().is_empty() || x.cols() == 0 {
            return Err(Error::ShapeMismatch {
                op: "log_softmax",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, k) = (x.rows(), x.cols());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = x.row(i);
            let orow = &mut out[i * k..(i + 1) * k];
            log_softmax_row(row, orow);
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(Op::LogSoftmax { input }, t))
    }

    /// Negative log-likelihood pick: `out[i] = -logprobs[i, targets[i]]`.
    pub fn nll_pick(&mut self, logprobs: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        let lp = &self.nodes[logprobs].value;
        let (n, k) = (lp.rows(), lp.cols());
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "nll_pick",
                lhs: lp.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut out = vec![0.0; n];
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::invalid(format!(
                    "nll_pick: target {} out of range for {} classes",
                    t, k
                )));
            }
            out[i] = -lp.row(i)[t];
        }
        Ok(self.push(Op::NllPick { logprobs, targets }, Tensor::vector(out)))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.nodes[input].value.data().iter().sum();
        self.push(Op::Sum { input }, Tensor::scalar(s))
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let v = &self.nodes[input].value;
        let s: f64 = v.data().iter().sum();
        let m = s / v.numel() as f64;
        self.push(Op::Mean { input }, Tensor::scalar(m))
    }

    /// Multiply by a constant. A constant of exactly zero silences the
    /// branch in the backward pass.
    pub fn scale(&mut self, input: NodeId, c: f64) -> Result<NodeId> {
        if !c.is_finite() {
            return Err(Error::invalid(format!("scale: non-finite constant {c}")));
        }
        let x = &self.nodes[input].value;
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())?;
        Ok(self.push(Op::Scale { input, c }, t))
    }

    /// Gradient reversal: identity forward; backward delivers
    /// `-scale × upstream` to the input. `scale` must be non-negative.
    pub fn grad_reverse(&mut self, input: NodeId, scale: f64) -> Result<NodeId> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!(
                "grad_reverse: scale must be a non-negative real, got {scale}"
            )));
        }
        let t = self.nodes[input].value.clone();
        Ok(self.push(Op::GradReverse { input, scale }, t))
    }

    /// Gradient blocking: identity forward; backward delivers nothing.
    pub fn grad_block(&mut self, input: NodeId) -> NodeId {
        let t = self.nodes[input].value.clone();
        self.push(Op::GradBlock { input }, t)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Accumulators are reset first, so
    /// repeated calls on one tape are independent. Returns the gradient for
    /// every registered parameter (exact zeros where the root is
    /// unreachable).
    pub fn backward(&mut self, root: NodeId) -> Result<GradientMap> {
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: root must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root] = Some(vec![1.0]);

        let Tape { nodes, grads, .. } = self;
        for id in (0..=root).rev() {
            let upstream = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            backprop(nodes, grads, id, &upstream);
        }

        let mut map = GradientMap::default();
        for (node, id, _group) in &self.params {
            let grad = match &self.grads[*node] {
                Some(g) => Tensor::new(self.nodes[*node].value.shape().to_vec(), g.clone())?,
                None => Tensor::zeros(self.nodes[*node].value.shape().to_vec()),
            };
            map.insert(id.clone(), grad);
        }
        Ok(map)
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], id: NodeId, numel: usize) -> &'g mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; numel])
}

/// Send one node's upstream gradient to its parents.
fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, up: &[f64]) {
    let numel = |n: NodeId| nodes[n].value.numel();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::EmbedBag { table, tokens, mean } => {
            let d = nodes[*table].value.shape()[1];
            let g = acc(grads, *table, numel(*table));
            for (i, toks) in tokens.iter().enumerate() {
                let f = if *mean { 1.0 / toks.len() as f64 } else { 1.0 };
                for &tok in toks {
                    for j in 0..d {
                        g[tok * d + j] += f * up[i * d + j];
                    }
                }
            }
        }
        Op::StackRows { rows } => {
            let d = up.len() / rows.len();
            for (i, &r) in rows.iter().enumerate() {
                let g = acc(grads, r, numel(r));
                for j in 0..d {
                    g[j] += up[i * d + j];
                }
            }
        }
        Op::Concat { parts } => {
            let rows = nodes[id].value.rows();
            let total = nodes[id].value.cols();
            let mut offset = 0;
            for &p in parts {
                let cols = nodes[p].value.cols();
                let g = acc(grads, p, numel(p));
                for r in 0..rows {
                    for j in 0..cols {
                        g[r * cols + j] += up[r * total + offset + j];
                    }
                }
                offset += cols;
            }
        }
        Op::MatMul { lhs, rhs } => {
            let (n, k) = (nodes[*lhs].value.rows(), nodes[*lhs].value.cols());
            let m = nodes[*rhs].value.shape()[1];
            {
                let r = nodes[*rhs].value.data();
                let g = acc(grads, *lhs, numel(*lhs));
                for i in 0..n {
                    for j in 0..k {
                        let mut s = 0.0;
                        for c in 0..m {
                            s += up[i * m + c] * r[j * m + c];
                        }
                        g[i * k + j] += s;
                    }
                }
            }
            {
                let l = nodes[*lhs].value.data();
                let g = acc(grads, *rhs, numel(*rhs));
                for i in 0..n {
                    for j in 0..k {
                        let a = l[i * k + j];
                        for c in 0..m {
                            g[j * m + c] += a * up[i * m + c];
                        }
                    }
                }
            }
        }
        Op::AddBias { input, bias } => {
            let m = nodes[*bias].value.numel();
            let g = acc(grads, *input, numel(*input));
            for (gi, &u) in g.iter_mut().zip(up) {
                *gi += u;
            }
            let g = acc(grads, *bias, m);
            for (i, &u) in up.iter().enumerate() {
                g[i % m] += u;
            }
        }
        Op::Add { a, b } => {
            for &n in &[*a, *b] {
                let g = acc(grads, n, numel(n));
                for (gi, &u) in g.iter_mut().zip(up) {
                    *gi += u;
                }
            }
        }
        Op::Sub { a, b } => {
            let g = acc(grads, *a, numel(*a));
            for (gi, &u) in g.iter_mut().zip(up) {
                *gi += u;
            }
            let g = acc(grads, *b, numel(*b));
            for (gi, &u) in g.iter_mut().zip(up) {
                *gi -= u;
            }
        }
        Op::Mul { a, b } => {
            {
                let bv = nodes[*b].value.data();
                let g = acc(grads, *a, numel(*a));
                for ((gi, &u), &v) in g.iter_mut().zip(up).zip(bv) {
                    *gi += u * v;
                }
            }
            {
                let av = nodes[*a].value.data();
                let g = acc(grads, *b, numel(*b));
                for ((gi, &u), &v) in g.iter_mut().zip(up).zip(av) {
                    *gi += u * v;
                }
            }
        }
        Op::Abs { input } => {
            let x = nodes[*input].value.data();
            let g = acc(grads, *input, numel(*input));
            for ((gi, &u), &v) in g.iter_mut().zip(up).zip(x) {
                let s = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gi += u * s;
            }
        }
        Op::Tanh { input } => {
            let y = nodes[id].value.data();
            let g = acc(grads, *input, numel(*input));
            for ((gi, &u), &t) in g.iter_mut().zip(up).zip(y) {
                *gi += u * (1.0 - t * t);
            }
        }
        Op::LogSoftmax { input } => {
            let y = nodes[id].value.data();
            let (n, k) = (nodes[id].value.rows(), nodes[id].value.cols());
            let g = acc(grads, *input, numel(*input));
            for i in 0..n {
                let urow = &up[i * k..(i + 1) * k];
                let s: f64 = urow.iter().sum();
                for j in 0..k {
                    g[i * k + j] += urow[j] - y[i * k + j].exp() * s;
                }
            }
        }
        Op::NllPick { logprobs, targets } => {
            let k = nodes[*logprobs].value.cols();
            let g = acc(grads, *logprobs, numel(*logprobs));
            for (i, &t) in targets.iter().enumerate() {
                g[i * k + t] -= up[i];
            }
        }
        Op::Sum { input } => {
            let u = up[0];
            let g = acc(grads, *input, numel(*input));
            for gi in g.iter_mut() {
                *gi += u;
            }
        }
        Op::Mean { input } => {
            let u = up[0] / nodes[*input].value.numel() as f64;
            let g = acc(grads, *input, numel(*input));
            for gi in g.iter_mut() {
                *gi += u;
            }
        }
        Op::Scale { input, c } => {
            if *c != 0.0 {
                let g = acc(grads, *input, numel(*input));
                for (gi, &u) in g.iter_mut().zip(up) {
                    *gi += c * u;
                }
            }
        }
        Op::GradReverse { input, scale } => {
            if *scale != 0.0 {
                let g = acc(grads, *input, numel(*input));
                for (gi, &u) in g.iter_mut().zip(up) {
                    *gi += -scale * u;
                }
            }
        }
        // Identity forward, nothing backward: the recorded parent is left
        // untouched so blocked branches stay exactly silent.
        Op::GradBlock { input: _ } => {}
    }
}

/// Stable log-softmax of one row into `out`.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}
