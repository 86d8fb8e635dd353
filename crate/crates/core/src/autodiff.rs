//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: nodes are appended in evaluation order, so the
//! node list is already a topological order and [`Graph::backward`] walks it
//! once in reverse. A graph belongs to one thread; data parallelism builds
//! one graph per worker over shared, read-only parameter tensors.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive score bias applied to masked attention keys.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a packed `[rows, H]` batch splits into independent sequences for
/// attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    /// `(first_row, len)` of each sequence.
    pub segments: Vec<(usize, usize)>,
    /// Per row: whether the position may be attended to as a key.
    pub key_mask: Vec<bool>,
    pub heads: usize,
}

impl AttentionLayout {
    pub fn single(len: usize, heads: usize) -> Self {
        AttentionLayout {
            segments: vec![(0, len)],
            key_mask: vec![true; len],
            heads,
        }
    }

    pub fn rows(&self) -> usize {
        self.key_mask.len()
    }
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddBias(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Softmax {
        x: NodeId,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        src: NodeId,
        rows: Arc<Vec<usize>>,
    },
    SegmentMean {
        x: NodeId,
        groups: Arc<Vec<Vec<usize>>>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: Arc<AttentionLayout>,
        probs: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        weight: T,
        probs: Vec<T>,
    },
    CrossEntropy {
        probs: NodeId,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient; zeros when nothing has flowed into the node.
    pub fn grad(&self, id: NodeId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    // ---- operations -------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// `x · wᵀ + b` with `w: [out, in]`. `x` is `[n, in]`, or `[in]` for a
    /// single vector.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.is_empty() || xs.len() > 2 || *xs.last().unwrap() != ws[1] {
            return Err(Error::shape("linear", xs, ws));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape("linear bias", self.shape(b), &[out_dim]));
            }
        }
        let n = self.value(x).numel() / in_dim;
        let out_shape = if xs.len() == 1 { vec![out_dim] } else { vec![n, out_dim] };
        let mut out = vec![T::zero(); n * out_dim];
        if let Some(b) = b {
            for row in out.chunks_exact_mut(out_dim) {
                row.copy_from_slice(self.data(b));
            }
        }
        gemm_nt(n, in_dim, out_dim, self.data(x), self.data(w), &mut out);
        let value = Tensor::new(out_shape, out)?;
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &parents))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// Adds `b: [H]` to every row of `x: [.., H]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, cols) = self.value(x).as_matrix_dims();
        if self.shape(b) != [cols] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(cols) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::AddBias(x, b), &[x, b]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = T::lit(self.value(x).numel() as f64);
        let value = Tensor::scalar(self.value(x).sum() / n);
        self.push(value, Op::Mean(x), &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Softmax along `axis`, stabilized by subtracting each slice's maximum.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        let mut slice = vec![T::zero(); axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for (a, s) in slice.iter_mut().enumerate() {
                    *s = src[base + a * inner];
                }
                softmax_in_place(&mut slice);
                for (a, &s) in slice.iter().enumerate() {
                    out[base + a * inner] = s;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            &[x],
        ))
    }

    /// Normalizes the last dimension, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let (rows, h) = self.value(x).as_matrix_dims();
        if h == 0 {
            return Err(Error::InvalidArgument("layer_norm over an empty dimension".into()));
        }
        if self.shape(gamma) != [h] || self.shape(beta) != [h] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let hf = T::lit(h as f64);
        let src = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut out = vec![T::zero(); src.len()];
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &src[r * h..(r + 1) * h];
            let mean = linalg::sum(row) / hf;
            let var = row.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / hf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..h {
                let xh = (row[j] - mean) * inv;
                xhat[r * h + j] = xh;
                out[r * h + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Row lookup: `out[i] = src[rows[i]]`. Serves as the embedding lookup.
    pub fn gather(&mut self, src: NodeId, rows: Arc<Vec<usize>>) -> Result<NodeId> {
        let shape = self.shape(src);
        if shape.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "gather needs a rank-2 table, got {shape:?}"
            )));
        }
        let (n_rows, h) = (shape[0], shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for table with {n_rows} rows"
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gather with no rows".into()));
        }
        let table = self.data(src);
        let mut out = Vec::with_capacity(rows.len() * h);
        for &r in rows.iter() {
            out.extend_from_slice(&table[r * h..(r + 1) * h]);
        }
        let value = Tensor::new([rows.len(), h], out)?;
        Ok(self.push(value, Op::Gather { src, rows }, &[src]))
    }

    /// Mean over each group of rows: `out[g] = mean(x[groups[g]])`.
    pub fn segment_mean(&mut self, x: NodeId, groups: Arc<Vec<Vec<usize>>>) -> Result<NodeId> {
        let (rows, h) = self.value(x).as_matrix_dims();
        if groups.is_empty() {
            return Err(Error::InvalidArgument("segment_mean with no groups".into()));
        }
        let src = self.data(x);
        let mut out = vec![T::zero(); groups.len() * h];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("segment {g} has no rows to pool")));
            }
            let acc = &mut out[g * h..(g + 1) * h];
            for &r in members {
                if r >= rows {
                    return Err(Error::InvalidArgument(format!("row {r} out of range ({rows} rows)")));
                }
                for (a, &v) in acc.iter_mut().zip(&src[r * h..(r + 1) * h]) {
                    *a += v;
                }
            }
            let n = T::lit(members.len() as f64);
            acc.iter_mut().for_each(|a| *a /= n);
        }
        let value = Tensor::new([groups.len(), h], out)?;
        Ok(self.push(value, Op::SegmentMean { x, groups }, &[x]))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut impl Rng) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let mask = dropout_mask(self.value(x).numel(), p, rng);
        self.dropout_with_mask(x, mask).expect("mask sized to input")
    }

    /// Elementwise product with a fixed, precomputed mask (already scaled).
    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("dropout", self.shape(x), &[mask.len()]));
        }
        let data: Vec<T> = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Multi-head scaled dot-product attention over `q, k, v: [rows, H]`.
    ///
    /// Each segment of the layout attends only within itself; keys whose
    /// mask bit is off receive [`MASK_BIAS`] before the softmax.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, layout: Arc<AttentionLayout>) -> Result<NodeId> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 2 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(Error::shape("attention", &shape, self.shape(k)));
        }
        let (rows, h) = (shape[0], shape[1]);
        let heads = layout.heads;
        if heads == 0 || h % heads != 0 {
            return Err(Error::Config(format!("hidden size {h} not divisible by {heads} heads")));
        }
        if layout.rows() != rows || layout.segments.iter().any(|&(s, l)| l == 0 || s + l > rows) {
            return Err(Error::InvalidArgument(format!(
                "attention layout does not cover {rows} rows"
            )));
        }
        let d = h / heads;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let bias = T::lit(MASK_BIAS);
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![T::zero(); rows * h];
        let mut probs = Vec::new();
        for &(start, len) in &layout.segments {
            for head in 0..heads {
                let qh = slice_head(qd, start, len, h, head, d);
                let kh = slice_head(kd, start, len, h, head, d);
                let vh = slice_head(vd, start, len, h, head, d);
                let mut scores = vec![T::zero(); len * len];
                gemm_nt(len, d, len, &qh, &kh, &mut scores);
                for row in scores.chunks_exact_mut(len) {
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= scale;
                        if !layout.key_mask[start + j] {
                            *s += bias;
                        }
                    }
                    softmax_in_place(row);
                }
                let mut ctx = vec![T::zero(); len * d];
                gemm_nn(len, len, d, &scores, &vh, &mut ctx);
                scatter_head(&mut out, &ctx, start, len, h, head, d);
                probs.extend_from_slice(&scores);
            }
        }
        let value = Tensor::new([rows, h], out)?;
        Ok(self.push(value, Op::Attention { q, k, v, layout, probs }, &[q, k, v]))
    }

    /// Attention weights recorded by an [`Graph::attention`] node, one
    /// `[len, len]` matrix per (segment, head), segment-major.
    pub fn attention_weights(&self, id: NodeId) -> Option<Vec<Tensor<T>>> {
        match &self.nodes[id.0].op {
            Op::Attention { layout, probs, .. } => {
                let mut out = Vec::new();
                let mut offset = 0;
                for &(_, len) in &layout.segments {
                    for _ in 0..layout.heads {
                        let block = probs[offset..offset + len * len].to_vec();
                        out.push(Tensor::new([len, len], block).ok()?);
                        offset += len * len;
                    }
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Mean cross-entropy of `softmax(logits)` against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let weight = T::one() / T::lit(labels.len().max(1) as f64);
        self.softmax_cross_entropy_weighted(logits, labels, weight)
    }

    /// `weight * Σ_b −log softmax(logits_b)[label_b]`.
    pub fn softmax_cross_entropy_weighted(&mut self, logits: NodeId, labels: &[usize], weight: T) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", &shape, &[labels.len()]));
        }
        let classes = shape[1];
        check_labels(labels, classes)?;
        let mut probs = self.data(logits).to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_exact_mut(classes).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            total += lse - row[label];
            softmax_in_place(row);
        }
        let value = Tensor::scalar(total * weight);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                weight,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean `−log p[label]` over rows of an already-normalized `probs`.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = self.shape(probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let classes = shape[1];
        check_labels(labels, classes)?;
        let tol = T::lit(1e-3);
        let data = self.data(probs);
        let mut total = T::zero();
        for (row, &label) in data.chunks_exact(classes).zip(labels) {
            if (linalg::sum(row) - T::one()).abs() > tol {
                return Err(Error::InvalidArgument("cross_entropy rows must sum to 1".into()));
            }
            total += -row[label].ln();
        }
        let value = Tensor::scalar(total / T::lit(labels.len() as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates d(root)/d(node) into every ancestor that requires a
    /// gradient. Calling it again without [`Graph::zero_grad`] adds on top.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, &v)| *e += v),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let mut send = |id: NodeId, contribution: Vec<T>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut adj[id.0] {
                Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(e, &v)| *e += v),
                slot @ None => *slot = Some(contribution),
            }
        };
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;

        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if needs(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, g, self.data(b), &mut ga);
                    send(a, ga);
                }
                if needs(b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(k, m, n, self.data(a), g, &mut gb);
                    send(b, gb);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                send(a, linalg::transpose(c, r, g));
            }
            &Op::Linear { x, w, b } => {
                let (out_dim, in_dim) = (self.shape(w)[0], self.shape(w)[1]);
                let n = self.value(x).numel() / in_dim;
                if needs(x) {
                    let mut gx = vec![T::zero(); n * in_dim];
                    gemm_nn(n, out_dim, in_dim, g, self.data(w), &mut gx);
                    send(x, gx);
                }
                if needs(w) {
                    let mut gw = vec![T::zero(); out_dim * in_dim];
                    gemm_tn(out_dim, n, in_dim, g, self.data(x), &mut gw);
                    send(w, gw);
                }
                if let Some(b) = b {
                    if needs(b) {
                        send(b, column_sums(g, out_dim));
                    }
                }
            }
            &Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    send(a, g.iter().zip(self.data(b)).map(|(&gi, &bi)| gi * bi).collect());
                }
                if needs(b) {
                    send(b, g.iter().zip(self.data(a)).map(|(&gi, &ai)| gi * ai).collect());
                }
            }
            &Op::Scale(a, factor) => send(a, g.iter().map(|&gi| gi * factor).collect()),
            &Op::AddBias(x, b) => {
                send(x, g.to_vec());
                if needs(b) {
                    send(b, column_sums(g, self.shape(b)[0]));
                }
            }
            &Op::Sum(x) => send(x, vec![g[0]; self.value(x).numel()]),
            &Op::Mean(x) => {
                let n = self.value(x).numel();
                send(x, vec![g[0] / T::lit(n as f64); n]);
            }
            &Op::Tanh(x) => {
                let y = self.nodes[i].value.data();
                send(x, g.iter().zip(y).map(|(&gi, &yi)| gi * (T::one() - yi * yi)).collect());
            }
            &Op::Relu(x) => {
                let xs = self.data(x);
                send(
                    x,
                    g.iter()
                        .zip(xs)
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect(),
                );
            }
            &Op::Gelu(x) => {
                let xs = self.data(x);
                send(x, g.iter().zip(xs).map(|(&gi, &xi)| gi * gelu_grad(xi)).collect());
            }
            &Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = self.nodes[i].value.data();
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for inn in 0..inner {
                        let base = o * axis_len * inner + inn;
                        let dot = (0..axis_len).fold(T::zero(), |acc, a| {
                            let idx = base + a * inner;
                            acc + g[idx] * y[idx]
                        });
                        for a in 0..axis_len {
                            let idx = base + a * inner;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                send(x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let h = self.shape(*gamma)[0];
                let hf = T::lit(h as f64);
                let gam = self.data(*gamma);
                if needs(*gamma) {
                    let mut gg = vec![T::zero(); h];
                    for (grow, xrow) in g.chunks_exact(h).zip(xhat.chunks_exact(h)) {
                        for j in 0..h {
                            gg[j] += grow[j] * xrow[j];
                        }
                    }
                    send(*gamma, gg);
                }
                if needs(*beta) {
                    send(*beta, column_sums(g, h));
                }
                if needs(*x) {
                    let mut gx = vec![T::zero(); g.len()];
                    let mut dxhat = vec![T::zero(); h];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * h..(r + 1) * h];
                        let xrow = &xhat[r * h..(r + 1) * h];
                        for j in 0..h {
                            dxhat[j] = grow[j] * gam[j];
                        }
                        let sum_d = linalg::sum(&dxhat);
                        let sum_dx = dxhat.iter().zip(xrow).fold(T::zero(), |acc, (&d, &xh)| acc + d * xh);
                        for j in 0..h {
                            gx[r * h + j] = inv / hf * (hf * dxhat[j] - sum_d - xrow[j] * sum_dx);
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::Gather { src, rows } => {
                let h = self.shape(*src)[1];
                let mut gs = vec![T::zero(); self.value(*src).numel()];
                for (grow, &r) in g.chunks_exact(h).zip(rows.iter()) {
                    for (acc, &v) in gs[r * h..(r + 1) * h].iter_mut().zip(grow) {
                        *acc += v;
                    }
                }
                send(*src, gs);
            }
            Op::SegmentMean { x, groups } => {
                let (_, h) = self.value(*x).as_matrix_dims();
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (grow, members) in g.chunks_exact(h).zip(groups.iter()) {
                    let n = T::lit(members.len() as f64);
                    for &r in members {
                        for (acc, &v) in gx[r * h..(r + 1) * h].iter_mut().zip(grow) {
                            *acc += v / n;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::Dropout { x, mask } => {
                send(*x, g.iter().zip(mask).map(|(&gi, &m)| gi * m).collect());
            }
            Op::Attention { q, k, v, layout, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let h = self.shape(q)[1];
                let heads = layout.heads;
                let d = h / heads;
                let scale = T::one() / T::lit(d as f64).sqrt();
                let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
                let n = qd.len();
                let (mut gq, mut gk, mut gv) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
                let mut offset = 0;
                for &(start, len) in &layout.segments {
                    for head in 0..heads {
                        let p = &probs[offset..offset + len * len];
                        offset += len * len;
                        let qh = slice_head(qd, start, len, h, head, d);
                        let kh = slice_head(kd, start, len, h, head, d);
                        let vh = slice_head(vd, start, len, h, head, d);
                        let dctx = slice_head(g, start, len, h, head, d);

                        let mut dv = vec![T::zero(); len * d];
                        gemm_tn(len, len, d, p, &dctx, &mut dv);
                        let mut dp = vec![T::zero(); len * len];
                        gemm_nt(len, d, len, &dctx, &vh, &mut dp);
                        for (dp_row, p_row) in dp.chunks_exact_mut(len).zip(p.chunks_exact(len)) {
                            let dot = dp_row.iter().zip(p_row).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                            for (ds, &pp) in dp_row.iter_mut().zip(p_row) {
                                *ds = pp * (*ds - dot) * scale;
                            }
                        }
                        let mut dq = vec![T::zero(); len * d];
                        gemm_nn(len, len, d, &dp, &kh, &mut dq);
                        let mut dk = vec![T::zero(); len * d];
                        gemm_tn(len, len, d, &dp, &qh, &mut dk);

                        scatter_head_add(&mut gq, &dq, start, len, h, head, d);
                        scatter_head_add(&mut gk, &dk, start, len, h, head, d);
                        scatter_head_add(&mut gv, &dv, start, len, h, head, d);
                    }
                }
                send(q, gq);
                send(k, gk);
                send(v, gv);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                weight,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] * *weight;
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &label) in gl.chunks_exact_mut(classes).zip(labels) {
                    row[label] -= scale;
                }
                send(*logits, gl);
            }
            Op::CrossEntropy { probs, labels } => {
                let classes = self.shape(*probs)[1];
                let p = self.data(*probs);
                let scale = g[0] / T::lit(labels.len() as f64);
                let mut gp = vec![T::zero(); p.len()];
                for (b, &label) in labels.iter().enumerate() {
                    let idx = b * classes + label;
                    gp[idx] = -scale / p[idx];
                }
                send(*probs, gp);
            }
        }
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&bad) => Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        ))),
        None => Ok(()),
    }
}

fn column_sums<T: Scalar>(g: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in g.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn slice_head<T: Scalar>(src: &[T], start: usize, len: usize, h: usize, head: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * d);
    for r in start..start + len {
        let base = r * h + head * d;
        out.extend_from_slice(&src[base..base + d]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], block: &[T], start: usize, len: usize, h: usize, head: usize, d: usize) {
    for (i, r) in (start..start + len).enumerate() {
        let base = r * h + head * d;
        dst[base..base + d].copy_from_slice(&block[i * d..(i + 1) * d]);
    }
}

fn scatter_head_add<T: Scalar>(dst: &mut [T], block: &[T], start: usize, len: usize, h: usize, head: usize, d: usize) {
    for (i, r) in (start..start + len).enumerate() {
        let base = r * h + head * d;
        for (o, &v) in dst[base..base + d].iter_mut().zip(&block[i * d..(i + 1) * d]) {
            *o += v;
        }
    }
}

/// Max-subtracted softmax over one contiguous slice.
/// Inverted-dropout mask: zero with probability `p`, `1/(1-p)` otherwise.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

const GELU_COEF: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_COEF) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(GELU_COEF);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).data(), &[6.0]);
    }

    #[test]
    fn product_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[2.0]));
        let y = g.param(t(&[1], &[5.0]));
        let z = g.mul(x, y).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).data(), &[5.0]);
        assert_eq!(g.grad(y).data(), &[2.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).data(), &[12.0]);
        g.zero_grad();
        assert_eq!(g.grad(x).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[3.0, 4.0]);
        assert_eq!(g.grad(c).data(), &[0.0, 0.0]);
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[4], &[0.0; 4]));
        let sa = g.softmax(a, 0).unwrap();
        assert_eq!(g.value(sa).data(), &[0.25; 4]);

        let b = g.constant(t(&[2], &[0.0, 2f32.ln()]));
        let sb = g.softmax(b, 0).unwrap();
        let got = g.value(sb).data();
        assert!((got[0] - 1.0 / 3.0).abs() < 1e-6 && (got[1] - 2.0 / 3.0).abs() < 1e-6);

        let c = g.constant(t(&[2], &[1000.0, 0.0]));
        let sc = g.softmax(c, 0).unwrap();
        assert_eq!(g.value(sc).data(), &[1.0, 0.0]);

        assert!(g.softmax(c, 1).is_err());
    }

    #[test]
    fn softmax_along_leading_axis() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]));
        let s = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let gamma = g.constant(Tensor::ones([2]));
        let beta = g.constant(Tensor::zeros([2]));
        let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
        let y = g.layer_norm(x, gamma, beta, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 1.0]);

        let gamma3 = g.constant(Tensor::ones([3]));
        let beta3 = g.constant(Tensor::zeros([3]));
        let c = g.constant(t(&[1, 3], &[4.0, 4.0, 4.0]));
        let y = g.layer_norm(c, gamma3, beta3, 1e-12).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let zero_gamma = g.constant(Tensor::zeros([2]));
        let shift = g.constant(t(&[2], &[0.5, -2.0]));
        let xs = g.constant(t(&[2, 2], &[1.0, 7.0, -3.0, 2.0]));
        let y = g.layer_norm(xs, zero_gamma, shift, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0f32), 0.0);
        assert!((gelu(10.0f32) - 10.0).abs() < 1e-4);
        // exact-erf value x·Φ(x) at 1 is 0.841345; tanh form within 1e-3 of it
        assert!((gelu(1.0f64) - 0.841_345).abs() < 1e-3);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let onehot = g.constant(t(&[1, 4], &[0.0, 1.0, 0.0, 0.0]));
        let l = g.cross_entropy(onehot, &[1]).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);

        let uniform = g.constant(t(&[2, 4], &[0.25; 8]));
        let l = g.cross_entropy(uniform, &[0, 3]).unwrap();
        assert!((g.value(l).data()[0] - 4f32.ln()).abs() < 1e-6);

        assert!(g.cross_entropy(uniform, &[7, 0]).is_err());
        let logits = g.constant(Tensor::zeros([1, 4]));
        assert!(g.softmax_cross_entropy(logits, &[4]).is_err());
    }

    #[test]
    fn fused_cross_entropy_gradient_is_p_minus_onehot() {
        let mut g = Graph::new();
        let logits = g.param(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let l = g.softmax_cross_entropy(logits, &[2]).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(logits);
        let third = 1.0 / 3.0;
        let want = [third, third, third - 1.0];
        for (a, b) in grad.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_single_position_copies_value() {
        let mut g = Graph::new();
        let q = g.constant(t(&[1, 4], &[1.0, -2.0, 0.5, 3.0]));
        let k = g.constant(t(&[1, 4], &[0.3, 0.1, -0.7, 2.0]));
        let v = g.constant(t(&[1, 4], &[9.0, 8.0, 7.0, 6.0]));
        let out = g.attention(q, k, v, Arc::new(AttentionLayout::single(1, 2))).unwrap();
        assert_eq!(g.value(out).data(), &[9.0, 8.0, 7.0, 6.0]);
        for w in g.attention_weights(out).unwrap() {
            assert_eq!(w.data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::<f32>::zeros([2, 6]));
        assert!(g.attention(q, q, q, Arc::new(AttentionLayout::single(2, 4))).is_err());
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut g = Graph::new();
        let table = g.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let rows = g.gather(table, Arc::new(vec![2, 0, 2])).unwrap();
        assert_eq!(g.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(rows);
        g.backward(s).unwrap();
        assert_eq!(g.grad(table).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.gather(table, Arc::new(vec![3])).is_err());
    }

    #[test]
    fn segment_mean_pools_groups() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 2], &[1.0, 1.0, 3.0, 3.0, 8.0, 0.0]));
        let m = g.segment_mean(x, Arc::new(vec![vec![0, 1], vec![2]])).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 2.0, 8.0, 0.0]);
        assert!(g.segment_mean(x, Arc::new(vec![vec![]])).is_err());
    }
}
