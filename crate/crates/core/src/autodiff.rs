//! Reverse-mode differentiation over the fixed set of operations the model
//! needs.
//!
//! A [`Tape`] records every operation in execution order. Inputs always
//! precede the node that consumes them, so the backward sweep is a single
//! pass in reverse order. Parameter leaves remember their [`ParamId`] and
//! [`Tape::backward`] adds their gradients into the [`ParamStore`].
//!
//! Shape mismatches and other contract violations panic.

use std::ops::Range;

use crate::kg::{EdgeMask, KnowledgeGraph};
use crate::param::{ParamId, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tensor::{self, Tensor};

/// Guard added inside logarithms and normalization denominators.
pub const EPS: f64 = 1e-12;

/// Column block width for the sparse propagation kernels.
const BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<'g> {
    Constant,
    Param(ParamId),
    Softmax(NodeId),
    ClampSoft(NodeId),
    OneMinus(NodeId),
    Hadamard(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMulBt(NodeId, NodeId),
    Mix {
        probs: NodeId,
        parts: Vec<NodeId>,
    },
    StackRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    GatherCols {
        input: NodeId,
        index: Vec<usize>,
    },
    SumColRanges {
        input: NodeId,
        ranges: Vec<Range<usize>>,
    },
    Propagate {
        input: NodeId,
        coef: NodeId,
        col_map: Vec<usize>,
        adjacency: &'g [SparseMatrix],
        mask: Option<&'g EdgeMask>,
    },
    PropagateOneHot {
        heads: Vec<usize>,
        coef: NodeId,
        col_map: Vec<usize>,
        adjacency: &'g [SparseMatrix],
        mask: Option<&'g EdgeMask>,
    },
    L1Normalize(NodeId),
    CrossEntropy {
        input: NodeId,
        targets: Vec<usize>,
    },
    WeightedSum {
        input: NodeId,
        weights: Tensor,
    },
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "node is not a scalar");
        v.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op<'g>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, &[])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id), &[])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = tensor::softmax_rows(self.value(x));
        self.push(value, Op::Softmax(x), &[x])
    }

    /// `1 − e^{−x}`, mapping `[0, ∞)` into `[0, 1)`.
    pub fn clamp_soft(&mut self, x: NodeId) -> NodeId {
        let input = self.value(x);
        assert!(
            input.data().iter().all(|&v| v >= 0.0),
            "clamp_soft requires non-negative input"
        );
        let value = input.map(|v| -(-v).exp_m1());
        self.push(value, Op::ClampSoft(x), &[x])
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| 1.0 - v);
        self.push(value, Op::OneMinus(x), &[x])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_with(self.value(a), self.value(b), "hadamard", |x, y| x * y);
        self.push(value, Op::Hadamard(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_with(self.value(a), self.value(b), "add", |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    /// `a · bᵀ` for `a: n×k`, `b: p×k`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::matmul_bt(self.value(a), self.value(b));
        self.push(value, Op::MatMulBt(a, b), &[a, b])
    }

    /// Per-column convex combination: `out[e][i] = Σ_k probs[i][k] · parts[k][e][i]`.
    pub fn mix(&mut self, probs: NodeId, parts: &[NodeId]) -> NodeId {
        let p = self.value(probs);
        assert_eq!(p.cols(), parts.len(), "mix: one probability column per part");
        let shape = self.value(parts[0]).shape();
        assert_eq!(p.rows(), shape.1, "mix: one probability row per column");
        let mut out = Tensor::zeros(shape.0, shape.1);
        for (k, &part) in parts.iter().enumerate() {
            let part = self.value(part);
            assert_eq!(part.shape(), shape, "mix: parts differ in shape");
            for e in 0..shape.0 {
                let src = part.row_slice(e);
                let dst = out.row_slice_mut(e);
                for i in 0..shape.1 {
                    dst[i] += p.get(i, k) * src[i];
                }
            }
        }
        let mut inputs = vec![probs];
        inputs.extend_from_slice(parts);
        self.push(
            out,
            Op::Mix {
                probs,
                parts: parts.to_vec(),
            },
            &inputs,
        )
    }

    pub fn stack_rows(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "stack_rows of nothing");
        let cols = self.value(inputs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in inputs {
            let v = self.value(i);
            assert_eq!(v.cols(), cols, "stack_rows: column count differs");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::StackRows(inputs.to_vec()),
            inputs,
        )
    }

    pub fn concat_cols(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "concat_cols of nothing");
        let rows = self.value(inputs[0]).rows();
        let total: usize = inputs.iter().map(|&i| self.value(i).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &i in inputs {
            let v = self.value(i);
            assert_eq!(v.rows(), rows, "concat_cols: row count differs");
            for r in 0..rows {
                out.row_slice_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row_slice(r));
            }
            offset += v.cols();
        }
        self.push(out, Op::ConcatCols(inputs.to_vec()), inputs)
    }

    /// `out[:, w] = input[:, index[w]]`.
    pub fn gather_cols(&mut self, input: NodeId, index: Vec<usize>) -> NodeId {
        let x = self.value(input);
        assert!(index.iter().all(|&c| c < x.cols()), "gather_cols index out of range");
        let mut out = Tensor::zeros(x.rows(), index.len());
        for r in 0..x.rows() {
            let src = x.row_slice(r);
            let dst = out.row_slice_mut(r);
            for (w, &c) in index.iter().enumerate() {
                dst[w] = src[c];
            }
        }
        self.push(out, Op::GatherCols { input, index }, &[input])
    }

    /// `out[:, q] = Σ_{w ∈ ranges[q]} input[:, w]`.
    pub fn sum_col_ranges(&mut self, input: NodeId, ranges: Vec<Range<usize>>) -> NodeId {
        let x = self.value(input);
        assert!(ranges.iter().all(|r| r.end <= x.cols()), "sum_col_ranges out of range");
        let mut out = Tensor::zeros(x.rows(), ranges.len());
        for r in 0..x.rows() {
            let src = x.row_slice(r);
            let dst = out.row_slice_mut(r);
            for (q, range) in ranges.iter().enumerate() {
                dst[q] = src[range.clone()].iter().sum();
            }
        }
        self.push(out, Op::SumColRanges { input, ranges }, &[input])
    }

    /// Relation-weighted sparse propagation of a batch of entity vectors:
    /// `out[:, w] = Σ_r coef[col_map[w]][r] · (input[:, w]ᵀ A_r)ᵀ`, computed
    /// relation by relation. Masked edges are skipped.
    pub fn propagate(
        &mut self,
        input: NodeId,
        coef: NodeId,
        col_map: Vec<usize>,
        graph: &'g KnowledgeGraph,
        mask: Option<&'g EdgeMask>,
    ) -> NodeId {
        let adjacency = graph.adjacency();
        let value = propagate_forward(self.value(input), self.value(coef), &col_map, adjacency, mask);
        self.push(
            value,
            Op::Propagate {
                input,
                coef,
                col_map,
                adjacency,
                mask,
            },
            &[input, coef],
        )
    }

    /// [`Tape::propagate`] applied to one-hot columns, `heads[w]` being the
    /// hot entity of column `w`. Cost is proportional to the heads' degrees.
    pub fn propagate_one_hot(
        &mut self,
        heads: Vec<usize>,
        coef: NodeId,
        col_map: Vec<usize>,
        graph: &'g KnowledgeGraph,
        mask: Option<&'g EdgeMask>,
    ) -> NodeId {
        let adjacency = graph.adjacency();
        let value = propagate_one_hot_forward(
            &heads,
            self.value(coef),
            &col_map,
            adjacency,
            mask,
            graph.num_entities(),
        );
        self.push(
            value,
            Op::PropagateOneHot {
                heads,
                coef,
                col_map,
                adjacency,
                mask,
            },
            &[coef],
        )
    }

    /// Single-vector form: `vᵀ Σ_r weights[r] A_r` for an `n × 1` column `v`
    /// and a `1 × |relations|` weight row.
    pub fn weighted_spmv(&mut self, v: NodeId, weights: NodeId, graph: &'g KnowledgeGraph) -> NodeId {
        assert_eq!(self.value(v).cols(), 1, "weighted_spmv expects one column");
        assert_eq!(self.value(weights).rows(), 1, "weighted_spmv expects one weight row");
        self.propagate(v, weights, vec![0], graph, None)
    }

    /// Column-wise `x / (Σ x + ε)`.
    pub fn l1_normalize(&mut self, x: NodeId) -> NodeId {
        let input = self.value(x);
        let sums = column_sums(input);
        let mut out = input.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v /= sums[c] + EPS;
            }
        }
        self.push(out, Op::L1Normalize(x), &[x])
    }

    /// Mean over columns of `−ln(x[t_q][q] / (Σ_e x[e][q] + ε) + ε)`; column
    /// `q` of `x` is a non-negative score vector with gold index `targets[q]`.
    pub fn cross_entropy(&mut self, x: NodeId, targets: Vec<usize>) -> NodeId {
        let input = self.value(x);
        assert_eq!(input.cols(), targets.len(), "cross_entropy: one target per column");
        assert!(!targets.is_empty(), "cross_entropy of an empty batch");
        let losses = cross_entropy_terms(input, &targets);
        let mean = losses.iter().sum::<f64>() / targets.len() as f64;
        self.push(Tensor::from_vec(1, 1, vec![mean]), Op::CrossEntropy { input: x, targets }, &[x])
    }

    /// Per-column loss terms of a cross-entropy node, for diagnostics.
    pub fn cross_entropy_terms(&self, node: NodeId) -> Vec<f64> {
        match &self.nodes[node.0].op {
            Op::CrossEntropy { input, targets } => cross_entropy_terms(self.value(*input), targets),
            _ => panic!("node is not a cross-entropy node"),
        }
    }

    /// `Σ x ⊙ weights`, a scalar read-out.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Tensor) -> NodeId {
        let v = zip_with(self.value(x), &weights, "weighted_sum", |a, b| a * b).sum();
        self.push(Tensor::from_vec(1, 1, vec![v]), Op::WeightedSum { input: x, weights }, &[x])
    }

    /// Back-propagates from the scalar `loss` and adds parameter gradients
    /// into `store`. Parameters off every path to `loss` receive nothing.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                op => self.backward_op(op, &node.value, &g, &mut grads),
            }
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backward_op(&self, op: &Op<'g>, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Param(_) => unreachable!(),
            Op::Softmax(x) => {
                let mut dx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy: f64 = y.iter().zip(g.row_slice(r)).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_slice_mut(r).iter_mut().enumerate() {
                        *d = y[c] * (*d - gy);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ClampSoft(x) => {
                let dx = zip_with(g, out, "clamp backward", |gv, y| gv * (1.0 - y));
                accumulate(grads, *x, dx);
            }
            Op::OneMinus(x) => accumulate(grads, *x, g.map(|v| -v)),
            Op::Hadamard(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, zip_with(g, self.value(*b), "", |x, y| x * y));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, zip_with(g, self.value(*a), "", |x, y| x * y));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
            Op::MatMulBt(a, b) => {
                // out = A Bᵀ: dA = G B, dB = Gᵀ A
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let mut da = Tensor::zeros(self.value(*a).rows(), bv.cols());
                    tensor::matmul_acc(g, bv, &mut da);
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let mut db = Tensor::zeros(g.cols(), av.cols());
                    tensor::matmul_at_acc(g, av, &mut db);
                    accumulate(grads, *b, db);
                }
            }
            Op::Mix { probs, parts } => {
                let p = self.value(*probs);
                let (n, m) = out.shape();
                let mut dp = Tensor::zeros(p.rows(), p.cols());
                for (k, &part) in parts.iter().enumerate() {
                    let pv = self.value(part);
                    let need = self.needs(part);
                    let mut dpart = if need { Tensor::zeros(n, m) } else { Tensor::zeros(0, 0) };
                    for e in 0..n {
                        let gr = g.row_slice(e);
                        let src = pv.row_slice(e);
                        for i in 0..m {
                            dp.data_mut()[i * parts.len() + k] += gr[i] * src[i];
                        }
                        if need {
                            let dst = dpart.row_slice_mut(e);
                            for i in 0..m {
                                dst[i] = p.get(i, k) * gr[i];
                            }
                        }
                    }
                    if need {
                        accumulate(grads, part, dpart);
                    }
                }
                if self.needs(*probs) {
                    accumulate(grads, *probs, dp);
                }
            }
            Op::StackRows(inputs) => {
                let mut offset = 0;
                for &i in inputs {
                    let (r, c) = self.value(i).shape();
                    if self.needs(i) {
                        let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                        accumulate(grads, i, Tensor::from_vec(r, c, slice));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(inputs) => {
                let mut offset = 0;
                for &i in inputs {
                    let (r, c) = self.value(i).shape();
                    if self.needs(i) {
                        let mut d = Tensor::zeros(r, c);
                        for row in 0..r {
                            d.row_slice_mut(row)
                                .copy_from_slice(&g.row_slice(row)[offset..offset + c]);
                        }
                        accumulate(grads, i, d);
                    }
                    offset += c;
                }
            }
            Op::GatherCols { input, index } => {
                let (r, c) = self.value(*input).shape();
                let mut d = Tensor::zeros(r, c);
                for row in 0..r {
                    let src = g.row_slice(row);
                    let dst = d.row_slice_mut(row);
                    for (w, &col) in index.iter().enumerate() {
                        dst[col] += src[w];
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::SumColRanges { input, ranges } => {
                let (r, c) = self.value(*input).shape();
                let mut d = Tensor::zeros(r, c);
                for row in 0..r {
                    let src = g.row_slice(row);
                    let dst = d.row_slice_mut(row);
                    for (q, range) in ranges.iter().enumerate() {
                        dst[range.clone()].iter_mut().for_each(|v| *v = src[q]);
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::Propagate {
                input,
                coef,
                col_map,
                adjacency,
                mask,
            } => {
                let (dinput, dcoef) = propagate_backward(
                    self.value(*input),
                    self.value(*coef),
                    col_map,
                    adjacency,
                    *mask,
                    g,
                    self.needs(*input),
                    self.needs(*coef),
                );
                if let Some(d) = dinput {
                    accumulate(grads, *input, d);
                }
                if let Some(d) = dcoef {
                    accumulate(grads, *coef, d);
                }
            }
            Op::PropagateOneHot {
                heads,
                coef,
                col_map,
                adjacency,
                mask,
            } => {
                let c = self.value(*coef);
                let mut dcoef = Tensor::zeros(c.rows(), c.cols());
                let w = heads.len();
                for (r, m) in adjacency.iter().enumerate() {
                    let masked = mask.map(|mk| mk.relation(r));
                    for (col, &h) in heads.iter().enumerate() {
                        let mut acc = 0.0;
                        for k in m.row_range(h) {
                            if masked.is_some_and(|mk| mk[k]) {
                                continue;
                            }
                            acc += g.data()[m.col_indices()[k] * w + col];
                        }
                        dcoef.data_mut()[col_map[col] * c.cols() + r] += acc;
                    }
                }
                accumulate(grads, *coef, dcoef);
            }
            Op::L1Normalize(x) => {
                let input = self.value(*x);
                let sums = column_sums(input);
                let (rows, cols) = input.shape();
                let mut dot = vec![0.0; cols];
                for r in 0..rows {
                    for (c, d) in dot.iter_mut().enumerate() {
                        *d += g.get(r, c) * input.get(r, c);
                    }
                }
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let s = sums[c] + EPS;
                        dx.set(r, c, g.get(r, c) / s - dot[c] / (s * s));
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { input, targets } => {
                let x = self.value(*input);
                let sums = column_sums(x);
                let q = targets.len() as f64;
                let upstream = g.data()[0];
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for (c, &t) in targets.iter().enumerate() {
                    let s = sums[c] + EPS;
                    let u = x.get(t, c) / s;
                    let dl_du = -upstream / (q * (u + EPS));
                    // du/dx[e] = δ(e,t)/s − x[t]/s²
                    let common = -x.get(t, c) / (s * s) * dl_du;
                    for e in 0..x.rows() {
                        dx.set(e, c, common);
                    }
                    let v = dx.get(t, c) + dl_du / s;
                    dx.set(t, c, v);
                }
                accumulate(grads, *input, dx);
            }
            Op::WeightedSum { input, weights } => {
                let upstream = g.data()[0];
                accumulate(grads, *input, weights.map(|w| w * upstream));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn column_sums(x: &Tensor) -> Vec<f64> {
    let mut sums = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (s, v) in sums.iter_mut().zip(x.row_slice(r)) {
            *s += v;
        }
    }
    sums
}

fn cross_entropy_terms(x: &Tensor, targets: &[usize]) -> Vec<f64> {
    let sums = column_sums(x);
    targets
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let u = x.get(t, c) / (sums[c] + EPS);
            -(u + EPS).ln()
        })
        .collect()
}

/// `out += a ⊙ b`, written so that it vectorizes.
#[inline(always)]
fn fma_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    let len = out.len();
    let (a, b) = (&a[..len], &b[..len]);
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

/// `coef` gathered and transposed to `relations × columns`.
fn coef_by_relation(coef: &Tensor, col_map: &[usize], relations: usize) -> Vec<f64> {
    assert_eq!(coef.cols(), relations, "coefficient rows must span all relations");
    let w = col_map.len();
    let mut ct = vec![0.0; relations * w];
    for (col, &row) in col_map.iter().enumerate() {
        let src = coef.row_slice(row);
        for r in 0..relations {
            ct[r * w + col] = src[r];
        }
    }
    ct
}

// The propagation kernels dominate training time. They are compiled twice and
// the AVX2 build is picked at runtime when the CPU supports it.

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn propagate_forward_avx2(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
) -> Tensor {
    propagate_forward_impl(input, coef, col_map, adjacency, mask)
}

fn propagate_forward(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
) -> Tensor {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { propagate_forward_avx2(input, coef, col_map, adjacency, mask) };
    }
    propagate_forward_impl(input, coef, col_map, adjacency, mask)
}

#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
#[target_feature(enable = "avx2,fma")]
fn propagate_backward_avx2(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
    g: &Tensor,
    want_input: bool,
    want_coef: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    propagate_backward_impl(input, coef, col_map, adjacency, mask, g, want_input, want_coef)
}

#[allow(clippy::too_many_arguments)]
fn propagate_backward(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
    g: &Tensor,
    want_input: bool,
    want_coef: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe {
            propagate_backward_avx2(input, coef, col_map, adjacency, mask, g, want_input, want_coef)
        };
    }
    propagate_backward_impl(input, coef, col_map, adjacency, mask, g, want_input, want_coef)
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

/// Copies columns `b0..b0 + bw` of a row-major `n × w` matrix into a
/// contiguous `n × bw` buffer and flags its nonzero rows.
#[inline(always)]
fn load_block(src: &[f64], w: usize, b0: usize, bw: usize, buf: &mut [f64], active: &mut [bool]) {
    for (i, a) in active.iter_mut().enumerate() {
        let row = &src[i * w + b0..i * w + b0 + bw];
        buf[i * bw..(i + 1) * bw].copy_from_slice(row);
        *a = row.iter().any(|&v| v != 0.0);
    }
}

#[inline(always)]
fn store_block(buf: &[f64], dst: &mut [f64], w: usize, b0: usize, bw: usize) {
    let n = dst.len() / w;
    for i in 0..n {
        dst[i * w + b0..i * w + b0 + bw].copy_from_slice(&buf[i * bw..(i + 1) * bw]);
    }
}

#[inline(always)]
fn propagate_forward_impl(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
) -> Tensor {
    let (n, w) = input.shape();
    assert_eq!(col_map.len(), w, "propagate: one coefficient row per column");
    assert!(adjacency.iter().all(|m| m.rows() == n), "propagate: entity count mismatch");
    let ct = coef_by_relation(coef, col_map, adjacency.len());
    let mut out = Tensor::zeros(n, w);
    let mut active = vec![false; n];
    let mut sbuf = vec![0.0; n * BLOCK];
    let mut dbuf = vec![0.0; n * BLOCK];
    let mut tmp = vec![0.0; BLOCK];

    for b0 in (0..w).step_by(BLOCK) {
        let bw = (b0 + BLOCK).min(w) - b0;
        load_block(input.data(), w, b0, bw, &mut sbuf, &mut active);
        dbuf[..n * bw].fill(0.0);
        let tmp = &mut tmp[..bw];
        for (r, m) in adjacency.iter().enumerate() {
            let c = &ct[r * w + b0..r * w + b0 + bw];
            if c.iter().all(|&v| v == 0.0) {
                continue;
            }
            let masked = mask.map(|mk| mk.relation(r));
            let cols = m.col_indices();
            for i in 0..n {
                let range = m.row_range(i);
                if !active[i] || range.is_empty() {
                    continue;
                }
                let s = &sbuf[i * bw..(i + 1) * bw];
                for ((t, &x), &y) in tmp.iter_mut().zip(c).zip(s) {
                    *t = x * y;
                }
                for k in range {
                    if masked.is_some_and(|mk| mk[k]) {
                        continue;
                    }
                    let j = cols[k];
                    for (d, &t) in dbuf[j * bw..(j + 1) * bw].iter_mut().zip(tmp.iter()) {
                        *d += t;
                    }
                }
            }
        }
        store_block(&dbuf[..n * bw], out.data_mut(), w, b0, bw);
    }
    out
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn propagate_backward_impl(
    input: &Tensor,
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
    g: &Tensor,
    want_input: bool,
    want_coef: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, w) = input.shape();
    let relations = adjacency.len();
    let ct = coef_by_relation(coef, col_map, relations);
    let mut dinput = want_input.then(|| Tensor::zeros(n, w));
    let mut dct = if want_coef { vec![0.0; relations * w] } else { Vec::new() };
    let mut active = vec![false; n];
    let mut g_active = vec![false; n];
    let mut sbuf = vec![0.0; n * BLOCK];
    let mut gbuf = vec![0.0; n * BLOCK];
    let mut dbuf = vec![0.0; n * BLOCK];
    let mut tmp = vec![0.0; BLOCK];

    for b0 in (0..w).step_by(BLOCK) {
        let bw = (b0 + BLOCK).min(w) - b0;
        load_block(input.data(), w, b0, bw, &mut sbuf, &mut active);
        load_block(g.data(), w, b0, bw, &mut gbuf, &mut g_active);
        dbuf[..n * bw].fill(0.0);
        let tmp = &mut tmp[..bw];
        for (r, m) in adjacency.iter().enumerate() {
            let c = &ct[r * w + b0..r * w + b0 + bw];
            let masked = mask.map(|mk| mk.relation(r));
            let cols = m.col_indices();
            let rel_input = want_input && c.iter().any(|&v| v != 0.0);
            for i in 0..n {
                let row_input = rel_input;
                let row_coef = want_coef && active[i];
                if !row_input && !row_coef {
                    continue;
                }
                // both gradients only need the sum of upstream rows over the edges
                let mut any = false;
                tmp.fill(0.0);
                for k in m.row_range(i) {
                    let j = cols[k];
                    if !g_active[j] || masked.is_some_and(|mk| mk[k]) {
                        continue;
                    }
                    any = true;
                    for (t, &x) in tmp.iter_mut().zip(&gbuf[j * bw..(j + 1) * bw]) {
                        *t += x;
                    }
                }
                if !any {
                    continue;
                }
                if row_input {
                    fma_into(&mut dbuf[i * bw..(i + 1) * bw], c, tmp);
                }
                if row_coef {
                    fma_into(&mut dct[r * w + b0..r * w + b0 + bw], &sbuf[i * bw..(i + 1) * bw], tmp);
                }
            }
        }
        if let Some(d) = dinput.as_mut() {
            store_block(&dbuf[..n * bw], d.data_mut(), w, b0, bw);
        }
    }

    let dcoef = want_coef.then(|| {
        let mut d = Tensor::zeros(coef.rows(), coef.cols());
        for (col, &row) in col_map.iter().enumerate() {
            for r in 0..relations {
                d.data_mut()[row * relations + r] += dct[r * w + col];
            }
        }
        d
    });
    (dinput, dcoef)
}
fn propagate_one_hot_forward(
    heads: &[usize],
    coef: &Tensor,
    col_map: &[usize],
    adjacency: &[SparseMatrix],
    mask: Option<&EdgeMask>,
    n: usize,
) -> Tensor {
    assert_eq!(heads.len(), col_map.len(), "propagate_one_hot: one head per column");
    assert!(heads.iter().all(|&h| h < n), "propagate_one_hot: head out of range");
    assert_eq!(coef.cols(), adjacency.len(), "coefficient rows must span all relations");
    let w = heads.len();
    let mut out = Tensor::zeros(n, w);
    let dst = out.data_mut();
    for (r, m) in adjacency.iter().enumerate() {
        let masked = mask.map(|mk| mk.relation(r));
        for (col, &h) in heads.iter().enumerate() {
            let c = coef.get(col_map[col], r);
            for k in m.row_range(h) {
                if masked.is_some_and(|mk| mk[k]) {
                    continue;
                }
                dst[m.col_indices()[k] * w + col] += c;
            }
        }
    }
    out
}
