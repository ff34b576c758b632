//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Each forward operation appends a [`Node`] holding its output value, the
//! ids of its inputs and whatever intermediates the backward pass needs.
//! Nodes are therefore already in topological order and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! A tape is built per forward pass and dropped afterwards; parameters live
//! in a [`crate::params::ParamStore`] and enter the tape as leaves.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch; decides whether dropout draws a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    EwMul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    Row { m: NodeId, index: usize },
    StackRows { rows: Vec<NodeId> },
    ScaleRows { m: NodeId, weights: NodeId },
    MeanRows { m: NodeId },
    MaxPoolRows { m: NodeId, argmax: Vec<usize> },
    Concat { parts: Vec<NodeId> },
    CrossEntropy { logits: NodeId, probs: Tensor },
    Dropout { x: NodeId, mask: Vec<f64> },
    Sum { x: NodeId },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
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
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a constant or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_zeros(&mut self, shape: Vec<usize>) -> NodeId {
        self.leaf(Tensor::zeros(shape))
    }

    /// Matrix product. `a` must be rank 2 `[p, q]`; `b` is either rank 2
    /// `[q, r]` (output `[p, r]`) or rank 1 `[q]` (output `[p]`).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 {
            return Err(dim_err("matmul", av.shape(), bv.shape()));
        }
        let (p, q) = (av.shape()[0], av.shape()[1]);
        let value = match bv.rank() {
            2 if bv.shape()[0] == q => {
                let r = bv.shape()[1];
                let mut out = vec![0.0; p * r];
                for i in 0..p {
                    for k in 0..q {
                        let aik = av.data()[i * q + k];
                        let brow = &bv.data()[k * r..(k + 1) * r];
                        let orow = &mut out[i * r..(i + 1) * r];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
                Tensor::new(vec![p, r], out)?
            }
            1 if bv.shape()[0] == q => {
                let mut out = vec![0.0; p];
                for (i, o) in out.iter_mut().enumerate() {
                    let arow = &av.data()[i * q..(i + 1) * q];
                    *o = arow.iter().zip(bv.data()).map(|(x, y)| x * y).sum();
                }
                Tensor::from_vec(out)
            }
            _ => return Err(dim_err("matmul", av.shape(), bv.shape())),
        };
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn ewmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err("ewmul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::EwMul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| {
                // Split on sign so exp never overflows.
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Tanh { x })
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(dim_err("softmax", xv.shape(), &[]));
        }
        let value = Tensor::from_vec(softmax_slice(xv.data()));
        Ok(self.push(value, Op::Softmax { x }))
    }

    /// Select row `index` of a rank-2 tensor as a vector.
    pub fn row(&mut self, m: NodeId, index: usize) -> Result<NodeId> {
        let mv = self.value(m);
        if mv.rank() != 2 {
            return Err(dim_err("row", mv.shape(), &[]));
        }
        if index >= mv.rows() {
            return Err(Error::argument(format!(
                "row index {index} out of range for {} rows",
                mv.rows()
            )));
        }
        let value = Tensor::from_vec(mv.row(index).to_vec());
        Ok(self.push(value, Op::Row { m, index }))
    }

    /// Stack equal-length vectors into a `[k, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::argument("stack_rows: empty row list"));
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let rv = self.value(r);
            if rv.rank() != 1 || rv.len() != d {
                return Err(dim_err("stack_rows", &[d], rv.shape()));
            }
            data.extend_from_slice(rv.data());
        }
        let value = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(
            value,
            Op::StackRows {
                rows: rows.to_vec(),
            },
        ))
    }

    /// Scale row `i` of a `[n, d]` matrix by `weights[i]`.
    pub fn scale_rows(&mut self, m: NodeId, weights: NodeId) -> Result<NodeId> {
        let (mv, wv) = (self.value(m), self.value(weights));
        if mv.rank() != 2 || wv.rank() != 1 || wv.len() != mv.rows() {
            return Err(dim_err("scale_rows", mv.shape(), wv.shape()));
        }
        let (n, d) = (mv.rows(), mv.cols());
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let w = wv.data()[i];
            data.extend(mv.row(i).iter().map(|v| v * w));
        }
        let value = Tensor::new(vec![n, d], data)?;
        Ok(self.push(value, Op::ScaleRows { m, weights }))
    }

    /// Mean over the rows of a `[n, d]` matrix.
    pub fn mean_rows(&mut self, m: NodeId) -> Result<NodeId> {
        let mv = self.value(m);
        if mv.rank() != 2 {
            return Err(dim_err("mean_rows", mv.shape(), &[]));
        }
        let (n, d) = (mv.rows(), mv.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, &v) in out.iter_mut().zip(mv.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let value = Tensor::from_vec(out);
        Ok(self.push(value, Op::MeanRows { m }))
    }

    /// Columnwise maximum over the rows of a `[n, d]` matrix. Also returns
    /// the winning row per column; ties go to the lowest row index. The
    /// backward pass routes gradient only to the winners.
    pub fn max_pool_rows(&mut self, m: NodeId) -> Result<(NodeId, Vec<usize>)> {
        let mv = self.value(m);
        if mv.rank() != 2 {
            return Err(dim_err("max_pool_rows", mv.shape(), &[]));
        }
        let (n, d) = (mv.rows(), mv.cols());
        let mut out = mv.row(0).to_vec();
        let mut argmax = vec![0usize; d];
        for i in 1..n {
            for (j, &v) in mv.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = Tensor::from_vec(out);
        let id = self.push(
            value,
            Op::MaxPoolRows {
                m,
                argmax: argmax.clone(),
            },
        );
        Ok((id, argmax))
    }

    /// Order-preserving concatenation of vectors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::argument("concat: empty part list"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 1 {
                return Err(dim_err("concat", pv.shape(), &[]));
            }
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::from_vec(data);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// `-log softmax(logits)[label]`, computed via a stable log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(dim_err("cross_entropy", lv.shape(), &[]));
        }
        if label >= lv.len() {
            return Err(Error::argument(format!(
                "label {label} out of range for {} classes",
                lv.len()
            )));
        }
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - lv.data()[label];
        let mut probs: Vec<f64> = lv.data().iter().map(|v| (v - lse).exp()).collect();
        probs[label] -= 1.0; // stored as (softmax - one_hot), ready for backward
        let probs = Tensor::from_vec(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, probs }))
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the
    /// identity (the input node is returned unchanged).
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::argument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep_scale })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Reverse sweep from a scalar root. Returns a gradient per reachable
    /// node, each with the same shape as the node's value.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::argument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, update: &dyn Fn(&mut [f64])| {
            let slot = grads[id.0]
                .get_or_insert_with(|| Tensor::zeros(self.value(id).shape().to_vec()));
            update(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.shape()[0], av.shape()[1]);
                if bv.rank() == 2 {
                    let r = bv.shape()[1];
                    // dA = G . B^T
                    acc(grads, *a, &|da| {
                        for i in 0..p {
                            for k in 0..q {
                                let mut s = 0.0;
                                for j in 0..r {
                                    s += g.data()[i * r + j] * bv.data()[k * r + j];
                                }
                                da[i * q + k] += s;
                            }
                        }
                    });
                    // dB = A^T . G
                    acc(grads, *b, &|db| {
                        for k in 0..q {
                            for j in 0..r {
                                let mut s = 0.0;
                                for i in 0..p {
                                    s += av.data()[i * q + k] * g.data()[i * r + j];
                                }
                                db[k * r + j] += s;
                            }
                        }
                    });
                } else {
                    // b is a vector: dA = g outer b, dB = A^T . g
                    acc(grads, *a, &|da| {
                        for i in 0..p {
                            let gi = g.data()[i];
                            for k in 0..q {
                                da[i * q + k] += gi * bv.data()[k];
                            }
                        }
                    });
                    acc(grads, *b, &|db| {
                        for i in 0..p {
                            let gi = g.data()[i];
                            for (k, dbk) in db.iter_mut().enumerate() {
                                *dbk += av.data()[i * q + k] * gi;
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                acc(grads, *a, &|da| {
                    for (d, &gv) in da.iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
                acc(grads, *b, &|db| {
                    for (d, &gv) in db.iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            }
            Op::EwMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|da| {
                    for ((d, &gv), &other) in da.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += gv * other;
                    }
                });
                acc(grads, *b, &|db| {
                    for ((d, &gv), &other) in db.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gv * other;
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(grads, *x, &|dx| {
                    for (d, &gv) in dx.iter_mut().zip(g.data()) {
                        *d += gv * factor;
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                acc(grads, *x, &|dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = &node.value;
                acc(grads, *x, &|dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Softmax { x } => {
                let y = &node.value;
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                acc(grads, *x, &|dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g.data()).zip(y.data()) {
                        *d += yv * (gv - dot);
                    }
                });
            }
            Op::Row { m, index } => {
                let cols = g.len();
                acc(grads, *m, &|dm| {
                    for (j, &gv) in g.data().iter().enumerate() {
                        dm[index * cols + j] += gv;
                    }
                });
            }
            Op::StackRows { rows } => {
                let d = node.value.cols();
                for (i, &r) in rows.iter().enumerate() {
                    acc(grads, r, &|dr| {
                        for (j, dv) in dr.iter_mut().enumerate() {
                            *dv += g.data()[i * d + j];
                        }
                    });
                }
            }
            Op::ScaleRows { m, weights } => {
                let (mv, wv) = (self.value(*m), self.value(*weights));
                let (n, d) = (mv.rows(), mv.cols());
                acc(grads, *m, &|dm| {
                    for i in 0..n {
                        let w = wv.data()[i];
                        for j in 0..d {
                            dm[i * d + j] += g.data()[i * d + j] * w;
                        }
                    }
                });
                acc(grads, *weights, &|dw| {
                    for (i, dwi) in dw.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += g.data()[i * d + j] * mv.data()[i * d + j];
                        }
                        *dwi += s;
                    }
                });
            }
            Op::MeanRows { m } => {
                let mv = self.value(*m);
                let (n, d) = (mv.rows(), mv.cols());
                let inv = 1.0 / n as f64;
                acc(grads, *m, &|dm| {
                    for i in 0..n {
                        for j in 0..d {
                            dm[i * d + j] += g.data()[j] * inv;
                        }
                    }
                });
            }
            Op::MaxPoolRows { m, argmax } => {
                let d = node.value.len();
                acc(grads, *m, &|dm| {
                    for j in 0..d {
                        dm[argmax[j] * d + j] += g.data()[j];
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(grads, p, &|dp| {
                        for (j, dv) in dp.iter_mut().enumerate() {
                            *dv += g.data()[offset + j];
                        }
                    });
                    offset += len;
                }
            }
            Op::CrossEntropy { logits, probs } => {
                let gs = g.item();
                acc(grads, *logits, &|dl| {
                    for (d, &pv) in dl.iter_mut().zip(probs.data()) {
                        *d += gs * pv;
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(grads, *x, &|dx| {
                    for ((d, &gv), &mv) in dx.iter_mut().zip(g.data()).zip(mask) {
                        *d += gv * mv;
                    }
                });
            }
            Op::Sum { x } => {
                let gs = g.item();
                acc(grads, *x, &|dx| {
                    for d in dx.iter_mut() {
                        *d += gs;
                    }
                });
            }
        }
    }
}

/// Softmax of a plain slice with max subtraction; used by the tape op and by
/// eval-time code that does not need gradients.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}
