//! Minimal reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] is a per-forward-pass arena of nodes. Ops record their
//! parents and enough to replay the chain rule; [`Graph::backward`]
//! walks the arena in reverse creation order and accumulates parameter
//! gradients into a [`Params`] store.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input or a parameter leaf (param = index into Params).
    Leaf { param: Option<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Broadcast-add a 1×n bias to every row.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNt(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    MeanRows(NodeId),
    /// Row-wise L2 normalization.
    L2NormRows(NodeId),
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    /// Per-row convex blend with constant weights: w·src + (1−w)·tgt.
    Mix {
        src: NodeId,
        tgt: NodeId,
        weights: Vec<f64>,
    },
    /// Mean over rows of −log softmax(row)[diag]: the InfoNCE core.
    CeDiagRows(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
}

const LN_EPS: f64 = 1e-8;

/// Named f64 parameter store with gradient buffers.
#[derive(Debug, Clone)]
pub struct Params {
    entries: Vec<(String, Tensor, Tensor)>,
    by_name: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let grad = Tensor::zeros(&value.shape);
        let idx = self.entries.len();
        self.entries.push((name.to_string(), value, grad));
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn index(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn grad(&self, idx: usize) -> &Tensor {
        &self.entries[idx].2
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v, _)| v.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, _, g) in &mut self.entries {
            g.fill(0.0);
        }
    }

    /// Flat view of every scalar, for finite-difference probing.
    pub fn get_flat(&self, flat: usize) -> f64 {
        let (idx, off) = self.locate(flat);
        self.entries[idx].1.data[off]
    }

    pub fn set_flat(&mut self, flat: usize, v: f64) {
        let (idx, off) = self.locate(flat);
        self.entries[idx].1.data[off] = v;
    }

    pub fn grad_flat(&self, flat: usize) -> f64 {
        let (idx, off) = self.locate(flat);
        self.entries[idx].2.data[off]
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (idx, (_, v, _)) in self.entries.iter().enumerate() {
            if flat < v.len() {
                return (idx, flat);
            }
            flat -= v.len();
        }
        panic!("flat parameter index out of range");
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, params: &Params, idx: usize) -> NodeId {
        self.push(params.value(idx).clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn named(&mut self, params: &Params, name: &str) -> NodeId {
        self.param(params, params.index(name))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for (x, y) in v.data.iter_mut().zip(&self.value(b).data) {
            *x += y;
        }
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for (x, y) in v.data.iter_mut().zip(&self.value(b).data) {
            *x -= y;
        }
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for (x, y) in v.data.iter_mut().zip(&self.value(b).data) {
            *x *= y;
        }
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let b = self.value(bias).data.clone();
        let n = v.cols();
        assert_eq!(b.len(), n, "bias width");
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = tensor::matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = tensor::matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let n = v.cols();
        for r in 0..v.rows() {
            tensor::softmax_inplace(&mut v.data[r * n..(r + 1) * n]);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let (m, n) = (xv.rows(), xv.cols());
        let mut v = Tensor::zeros(&xv.shape);
        for r in 0..m {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            let out = &mut v.data[r * n..(r + 1) * n];
            for j in 0..n {
                out[j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        self.push(v, Op::LayerNorm { x, gain, bias })
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let xv = self.value(a);
        let (m, n) = (xv.rows(), xv.cols());
        let mut v = Tensor::zeros(&[1, n]);
        for r in 0..m {
            for (o, x) in v.data.iter_mut().zip(xv.row(r)) {
                *o += x / m as f64;
            }
        }
        self.push(v, Op::MeanRows(a))
    }

    pub fn l2_norm_rows(&mut self, a: NodeId) -> NodeId {
        let xv = self.value(a);
        let (m, n) = (xv.rows(), xv.cols());
        let mut v = xv.clone();
        for r in 0..m {
            let norm = tensor::l2_norm(&v.data[r * n..(r + 1) * n]).max(1e-12);
            for x in &mut v.data[r * n..(r + 1) * n] {
                *x /= norm;
            }
        }
        let _ = m;
        self.push(v, Op::L2NormRows(a))
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = self.value(table);
        let n = t.cols();
        let mut v = Tensor::zeros(&[indices.len(), n]);
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(
            v,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        let m = xv.rows();
        let mut v = Tensor::zeros(&[m, len]);
        for r in 0..m {
            v.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(&[m, total]);
        for r in 0..m {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                let w = pv.cols();
                v.row_mut(r)[off..off + w].copy_from_slice(pv.row(r));
                off += w;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let n = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut v = Tensor::zeros(&[total, n]);
        let mut r = 0;
        for &p in parts {
            let pv = self.value(p);
            for i in 0..pv.rows() {
                v.row_mut(r).copy_from_slice(pv.row(i));
                r += 1;
            }
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Row p of output = w[p]·src[p] + (1−w[p])·tgt[p]. Weights are
    /// constants; gradient flows to both operands.
    pub fn mix_rows(&mut self, src: NodeId, tgt: NodeId, weights: &[f64]) -> NodeId {
        let s = self.value(src);
        let t = self.value(tgt);
        assert_eq!(s.shape, t.shape, "mix operand shapes");
        assert_eq!(weights.len(), s.rows(), "mix weight count");
        let n = s.cols();
        let mut v = Tensor::zeros(&s.shape);
        for r in 0..s.rows() {
            let w = weights[r];
            for j in 0..n {
                v.data[r * n + j] = w * s.data[r * n + j] + (1.0 - w) * t.data[r * n + j];
            }
        }
        self.push(
            v,
            Op::Mix {
                src,
                tgt,
                weights: weights.to_vec(),
            },
        )
    }

    /// (1/N)·Σᵢ −log softmax(row i)[i] on a square score matrix.
    pub fn ce_diag_rows(&mut self, scores: NodeId) -> NodeId {
        let s = self.value(scores);
        assert_eq!(s.rows(), s.cols(), "ce_diag_rows needs a square matrix");
        let n = s.rows();
        let mut total = 0.0;
        for r in 0..n {
            let mut row = s.row(r).to_vec();
            tensor::softmax_inplace(&mut row);
            total += -(row[r].max(1e-300)).ln();
        }
        self.push(Tensor::scalar(total / n as f64), Op::CeDiagRows(scores))
    }

    /// Reverse pass from a scalar node; parameter gradients accumulate
    /// into `params` (existing grads are not cleared).
    pub fn backward(&self, loss: NodeId, params: &mut Params) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Invariant("backward requires a scalar loss".into()));
        }
        if !lv.data[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(idx) = param {
                        let dst = &mut params.entries[*idx].2;
                        for (d, s) in dst.data.iter_mut().zip(&g.data) {
                            *d += s;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, &g);
                    accum(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, &g);
                    let mut ng = g.clone();
                    ng.data.iter_mut().for_each(|x| *x = -*x);
                    accum(&mut grads, *b, &ng);
                }
                Op::Mul(a, b) => {
                    let mut ga = g.clone();
                    for (x, y) in ga.data.iter_mut().zip(&self.value(*b).data) {
                        *x *= y;
                    }
                    let mut gb = g.clone();
                    for (x, y) in gb.data.iter_mut().zip(&self.value(*a).data) {
                        *x *= y;
                    }
                    accum(&mut grads, *a, &ga);
                    accum(&mut grads, *b, &gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.data.iter_mut().for_each(|x| *x *= s);
                    accum(&mut grads, *a, &ga);
                }
                Op::AddRow(a, bias) => {
                    accum(&mut grads, *a, &g);
                    let n = g.cols();
                    let mut gb = Tensor::zeros(&self.value(*bias).shape);
                    for r in 0..g.rows() {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    let _ = n;
                    accum(&mut grads, *bias, &gb);
                }
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_nt(&g, self.value(*b));
                    let gb = tensor::matmul_tn(self.value(*a), &g);
                    accum(&mut grads, *a, &ga);
                    accum(&mut grads, *b, &gb);
                }
                Op::MatMulNt(a, b) => {
                    // c = a·bᵀ: ga = g·b, gb = gᵀ·a
                    let ga = tensor::matmul(&g, self.value(*b));
                    let gb = tensor::matmul_tn(&g, self.value(*a));
                    accum(&mut grads, *a, &ga);
                    accum(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    accum(&mut grads, *a, &g.transpose());
                }
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    for (x, v) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        if *v <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accum(&mut grads, *a, &ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = Tensor::zeros(&y.shape);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = tensor::dot(gr, yr);
                        let out = &mut ga.data[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] = yr[j] * (gr[j] - s);
                        }
                    }
                    accum(&mut grads, *a, &ga);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = self.value(*x);
                    let gv = &self.value(*gain).data;
                    let (m, n) = (xv.rows(), xv.cols());
                    let mut gx = Tensor::zeros(&xv.shape);
                    let mut ggain = Tensor::zeros(&self.value(*gain).shape);
                    let mut gbias = Tensor::zeros(&self.value(*bias).shape);
                    for r in 0..m {
                        let row = xv.row(r);
                        let gr = g.row(r);
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                        let dxhat: Vec<f64> =
                            gr.iter().zip(gv.iter()).map(|(g, gn)| g * gn).collect();
                        let mean_dx = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dxx =
                            dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        let out = &mut gx.data[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] = inv * (dxhat[j] - mean_dx - xhat[j] * mean_dxx);
                            ggain.data[j] += gr[j] * xhat[j];
                            gbias.data[j] += gr[j];
                        }
                    }
                    accum(&mut grads, *x, &gx);
                    accum(&mut grads, *gain, &ggain);
                    accum(&mut grads, *bias, &gbias);
                }
                Op::MeanRows(a) => {
                    let xv = self.value(*a);
                    let (m, n) = (xv.rows(), xv.cols());
                    let mut ga = Tensor::zeros(&xv.shape);
                    for r in 0..m {
                        for j in 0..n {
                            ga.data[r * n + j] = g.data[j] / m as f64;
                        }
                    }
                    accum(&mut grads, *a, &ga);
                }
                Op::L2NormRows(a) => {
                    let xv = self.value(*a);
                    let y = &node.value;
                    let (m, n) = (xv.rows(), xv.cols());
                    let mut ga = Tensor::zeros(&xv.shape);
                    for r in 0..m {
                        let norm = tensor::l2_norm(xv.row(r)).max(1e-12);
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let yg = tensor::dot(yr, gr);
                        let out = &mut ga.data[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] = (gr[j] - yr[j] * yg) / norm;
                        }
                    }
                    accum(&mut grads, *a, &ga);
                }
                Op::GatherRows { table, indices } => {
                    let tv = self.value(*table);
                    let n = tv.cols();
                    let mut gt = Tensor::zeros(&tv.shape);
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..n {
                            gt.data[i * n + j] += g.data[r * n + j];
                        }
                    }
                    accum(&mut grads, *table, &gt);
                }
                Op::SliceCols { x, start, len } => {
                    let xv = self.value(*x);
                    let n = xv.cols();
                    let mut gx = Tensor::zeros(&xv.shape);
                    for r in 0..xv.rows() {
                        for j in 0..*len {
                            gx.data[r * n + start + j] = g.data[r * len + j];
                        }
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let mut gp = Tensor::zeros(&pv.shape);
                        for r in 0..pv.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        accum(&mut grads, p, &gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let mut gp = Tensor::zeros(&pv.shape);
                        for r in 0..pv.rows() {
                            gp.row_mut(r).copy_from_slice(g.row(row + r));
                        }
                        accum(&mut grads, p, &gp);
                        row += pv.rows();
                    }
                }
                Op::Mix { src, tgt, weights } => {
                    let n = g.cols();
                    let mut gs = Tensor::zeros(&g.shape);
                    let mut gt = Tensor::zeros(&g.shape);
                    for r in 0..g.rows() {
                        let w = weights[r];
                        for j in 0..n {
                            gs.data[r * n + j] = w * g.data[r * n + j];
                            gt.data[r * n + j] = (1.0 - w) * g.data[r * n + j];
                        }
                    }
                    accum(&mut grads, *src, &gs);
                    accum(&mut grads, *tgt, &gt);
                }
                Op::CeDiagRows(scores) => {
                    let s = self.value(*scores);
                    let n = s.rows();
                    let scale = g.data[0] / n as f64;
                    let mut gs = Tensor::zeros(&s.shape);
                    for r in 0..n {
                        let mut row = s.row(r).to_vec();
                        tensor::softmax_inplace(&mut row);
                        for j in 0..n {
                            let target = if j == r { 1.0 } else { 0.0 };
                            gs.data[r * n + j] = scale * (row[j] - target);
                        }
                    }
                    accum(&mut grads, *scores, &gs);
                }
            }
        }
        Ok(())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn accum(grads: &mut [Option<Tensor>], id: NodeId, g: &Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot => *slot = Some(g.clone()),
    }
}
