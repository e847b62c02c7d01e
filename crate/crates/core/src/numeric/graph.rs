//! Reverse-mode autodiff over eagerly evaluated tensor ops.
//!
//! A [`Graph`] is built per forward pass (one batch); parameter leaves copy
//! their values out of the [`ParamStore`] once per graph and gradients are
//! written back with [`Graph::write_grads`]. Only the ops the two fixed
//! networks need are implemented.

use super::store::ParamStore;
use super::tensor::{matmul_into, Tensor};
use super::{clamp_prob, sigmoid, NumericError};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// How a sampled subset's log-probability is composed from the per-feature
/// Bernoulli probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMode {
    /// Σ selected log p + Σ unselected log(1-p): the proper density of the
    /// sampling process.
    #[default]
    Bernoulli,
    /// Σ selected log p only.
    SelectedOnly,
}

impl LikelihoodMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bernoulli" => Some(Self::Bernoulli),
            "selected_only" | "selected-only" => Some(Self::SelectedOnly),
            _ => None,
        }
    }
}

enum Op {
    Input,
    Param { idx: usize },
    Gather { idx: usize, rows: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    AddN { parts: Vec<NodeId> },
    Scale { x: NodeId, k: f64 },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    SoftmaxRows { x: NodeId },
    MaskedSoftmax { x: NodeId, mask: Vec<bool> },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    TileRows { x: NodeId },
    Reshape { x: NodeId },
    SumSq { x: NodeId },
    Bce { yhat: NodeId, label: f64 },
    BernoulliLogProb {
        probs: NodeId,
        mask: Vec<bool>,
        mode: LikelihoodMode,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// Leaf bound to a store tensor; memoized so one graph holds one copy.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, NumericError> {
        let idx = store.idx_of(name)?;
        if let Some(&id) = self.param_nodes.get(&idx) {
            return Ok(id);
        }
        let mut value = store.tensor_by_idx(idx).clone();
        value.clear_grad();
        let id = self.push(Op::Param { idx }, value);
        self.param_nodes.insert(idx, id);
        Ok(id)
    }

    /// Embedding lookup: row `i` of the result is row `rows[i]` of the table.
    /// Out-of-range ids fall back to row 0, the reserved padding/unknown row.
    pub fn gather(
        &mut self,
        store: &ParamStore,
        table: &str,
        rows: &[u32],
    ) -> Result<NodeId, NumericError> {
        let idx = store.idx_of(table)?;
        let t = store.tensor_by_idx(idx);
        let cols = t.cols();
        let safe_rows: Vec<usize> = rows
            .iter()
            .map(|&r| if (r as usize) < t.rows() { r as usize } else { 0 })
            .collect();
        let mut data = Vec::with_capacity(safe_rows.len() * cols);
        for &r in &safe_rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::from_vec(safe_rows.len(), cols, data);
        Ok(self.push(
            Op::Gather {
                idx,
                rows: safe_rows,
            },
            value,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT { a, b }, value)
    }

    /// x (r×c) + bias (1×c) broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.at(r, c) + bv.at(0, c);
                out.set(r, c, v);
            }
        }
        self.push(Op::AddBias { x, bias }, out)
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let shape = self.value(parts[0]).shape();
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &p in parts {
            assert_eq!(self.value(p).shape(), shape, "add_n shape mismatch");
            for (o, v) in out.data_mut().iter_mut().zip(self.value(p).data()) {
                *o += v;
            }
        }
        self.push(
            Op::AddN {
                parts: parts.to_vec(),
            },
            out,
        )
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= k;
        }
        self.push(Op::Scale { x, k }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        self.push(Op::Relu { x }, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        self.push(Op::Sigmoid { x }, out)
    }

    /// Row-wise softmax with an order-independent normalizer.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let p = super::softmax(xv.row(r));
            for (c, v) in p.into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        self.push(Op::SoftmaxRows { x }, out)
    }

    /// Softmax over the unmasked entries of a 1×n row; masked entries are
    /// exactly zero in the output. At least one entry must be unmasked.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "masked_softmax expects a row vector");
        assert_eq!(xv.cols(), mask.len(), "mask length mismatch");
        assert!(mask.iter().any(|&m| m), "all entries masked");
        let kept: Vec<f64> = xv
            .row(0)
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        let soft = super::softmax(&kept);
        let mut out = Tensor::zeros(1, mask.len());
        let mut k = 0;
        for (c, &m) in mask.iter().enumerate() {
            if m {
                out.set(0, c, soft[k]);
                k += 1;
            }
        }
        self.push(
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
            out,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total_cols);
        let mut col0 = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..pv.cols() {
                    out.set(r, col0 + c, pv.at(r, c));
                }
            }
            col0 += pv.cols();
        }
        self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            out,
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let total_rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(pv.data());
        }
        self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            Tensor::from_vec(total_rows, cols, data),
        )
    }

    /// Repeat a 1×c row `times` times into a times×c matrix.
    pub fn tile_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "tile_rows expects a row vector");
        let cols = xv.cols();
        let mut data = Vec::with_capacity(times * cols);
        for _ in 0..times {
            data.extend_from_slice(xv.data());
        }
        self.push(Op::TileRows { x }, Tensor::from_vec(times, cols, data))
    }

    /// Row-major reshape (no data movement).
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "reshape size mismatch");
        let value = Tensor::from_vec(rows, cols, xv.data().to_vec());
        self.push(Op::Reshape { x }, value)
    }

    /// Scalar Σ x².
    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Op::SumSq { x }, Tensor::scalar(s))
    }

    /// Binary cross entropy -[y ln p + (1-y) ln(1-p)] of a scalar probability
    /// node, with the probability clamped away from 0 and 1.
    pub fn bce(&mut self, yhat: NodeId, label: f64) -> NodeId {
        let p = clamp_prob(self.value(yhat).item());
        let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
        self.push(Op::Bce { yhat, label }, Tensor::scalar(loss))
    }

    /// Log-probability of a sampled feature mask under independent
    /// Bernoulli draws with the given per-feature probabilities.
    pub fn bernoulli_log_prob(
        &mut self,
        probs: NodeId,
        mask: &[bool],
        mode: LikelihoodMode,
    ) -> NodeId {
        let pv = self.value(probs);
        assert_eq!(pv.len(), mask.len(), "mask length mismatch");
        let mut ll = 0.0;
        for (&p, &m) in pv.data().iter().zip(mask) {
            let pc = clamp_prob(p);
            if m {
                ll += pc.ln();
            } else if mode == LikelihoodMode::Bernoulli {
                ll += (1.0 - pc).ln();
            }
        }
        self.push(
            Op::BernoulliLogProb {
                probs,
                mask: mask.to_vec(),
                mode,
            },
            Tensor::scalar(ll),
        )
    }

    /// Affine layer `x·W + b` with an optional activation, validating shapes
    /// against the named store tensors.
    pub fn dense(
        &mut self,
        store: &ParamStore,
        weight: &str,
        bias: Option<&str>,
        x: NodeId,
        activation: Activation,
    ) -> Result<NodeId, NumericError> {
        let w = store.get(weight)?;
        let xv = self.value(x);
        if xv.cols() != w.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "dense",
                lhs: xv.shape(),
                rhs: w.shape(),
            });
        }
        let w_node = self.param(store, weight)?;
        let mut out = self.matmul(x, w_node);
        if let Some(bias) = bias {
            let b = store.get(bias)?;
            if b.shape() != (1, w.cols()) {
                return Err(NumericError::ShapeMismatch {
                    op: "dense bias",
                    lhs: b.shape(),
                    rhs: (1, w.cols()),
                });
            }
            let b_node = self.param(store, bias)?;
            out = self.add_bias(out, b_node);
        }
        Ok(match activation {
            Activation::None => out,
            Activation::Relu => self.relu(out),
            Activation::Sigmoid => self.sigmoid(out),
        })
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let n = self.nodes[id.0].value.len();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n])
    }

    fn add_grad(&mut self, id: NodeId, contrib: &[f64]) {
        let buf = self.grad_buf(id);
        debug_assert_eq!(buf.len(), contrib.len());
        for (b, c) in buf.iter_mut().zip(contrib) {
            *b += c;
        }
    }

    /// Reverse-mode pass from a scalar loss node. Node gradients accumulate
    /// inside the graph; use [`Graph::write_grads`] to push them to the store.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.shape(),
            (1, 1),
            "backward from non-scalar node"
        );
        self.grad_buf(loss)[0] += 1.0;
        for i in (0..self.nodes.len()).rev() {
            let id = NodeId(i);
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            if grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.backprop_node(id, &grad);
        }
    }

    fn backprop_node(&mut self, id: NodeId, grad: &[f64]) {
        match &self.nodes[id.0].op {
            Op::Input | Op::Param { .. } | Op::Gather { .. } => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.value(a).clone();
                let bv = self.value(b).clone();
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = dC·Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grad[i * n + j] * bv.at(p, j);
                        }
                        da[i * k + p] = acc;
                    }
                }
                // dB = Aᵀ·dC
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av_ip = av.at(i, p);
                        if av_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av_ip * grad[i * n + j];
                        }
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::MatMulNT { a, b } => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (a, b) = (*a, *b);
                let av = self.value(a).clone();
                let bv = self.value(b).clone();
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                let mut da = vec![0.0; m * k];
                matmul_into(&mut da, grad, bv.data(), m, n, k);
                let mut db = vec![0.0; n * k];
                for j in 0..n {
                    for i in 0..m {
                        let g = grad[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            db[j * k + p] += g * av.at(i, p);
                        }
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                let cols = self.value(bias).cols();
                let mut db = vec![0.0; cols];
                for (i, g) in grad.iter().enumerate() {
                    db[i % cols] += g;
                }
                self.add_grad(x, grad);
                self.add_grad(bias, &db);
            }
            Op::AddN { parts } => {
                for &p in &parts.clone() {
                    self.add_grad(p, grad);
                }
            }
            Op::Scale { x, k } => {
                let (x, k) = (*x, *k);
                let dx: Vec<f64> = grad.iter().map(|g| g * k).collect();
                self.add_grad(x, &dx);
            }
            Op::Relu { x } => {
                let x = *x;
                let dx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let out = self.nodes[id.0].value.data().to_vec();
                let dx: Vec<f64> = out.iter().zip(grad).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                self.add_grad(x, &dx);
            }
            Op::SoftmaxRows { x } => {
                let x = *x;
                let out = self.nodes[id.0].value.clone();
                let (rows, cols) = out.shape();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let s = out.row(r);
                    let g = &grad[r * cols..(r + 1) * cols];
                    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = s[c] * (g[c] - dot);
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::MaskedSoftmax { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                let s = self.nodes[id.0].value.data().to_vec();
                let dot: f64 = s
                    .iter()
                    .zip(grad)
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|((a, b), _)| a * b)
                    .sum();
                let dx: Vec<f64> = s
                    .iter()
                    .zip(grad)
                    .zip(&mask)
                    .map(|((&sv, &g), &m)| if m { sv * (g - dot) } else { 0.0 })
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let rows = self.nodes[id.0].value.rows();
                let total_cols = self.nodes[id.0].value.cols();
                let mut col0 = 0;
                for p in parts {
                    let pc = self.value(p).cols();
                    let mut dp = vec![0.0; rows * pc];
                    for r in 0..rows {
                        dp[r * pc..(r + 1) * pc]
                            .copy_from_slice(&grad[r * total_cols + col0..r * total_cols + col0 + pc]);
                    }
                    self.add_grad(p, &dp);
                    col0 += pc;
                }
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let n = self.value(p).len();
                    let dp = grad[offset..offset + n].to_vec();
                    self.add_grad(p, &dp);
                    offset += n;
                }
            }
            Op::TileRows { x } => {
                let x = *x;
                let cols = self.value(x).cols();
                let mut dx = vec![0.0; cols];
                for (i, g) in grad.iter().enumerate() {
                    dx[i % cols] += g;
                }
                self.add_grad(x, &dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.add_grad(x, grad);
            }
            Op::SumSq { x } => {
                let x = *x;
                let g = grad[0];
                let dx: Vec<f64> = self.value(x).data().iter().map(|&v| 2.0 * v * g).collect();
                self.add_grad(x, &dx);
            }
            Op::Bce { yhat, label } => {
                let (yhat, y) = (*yhat, *label);
                let p = self.value(yhat).item();
                // Zero gradient where the clamp is active.
                let d = if p == clamp_prob(p) {
                    (p - y) / (p * (1.0 - p))
                } else {
                    0.0
                };
                self.add_grad(yhat, &[grad[0] * d]);
            }
            Op::BernoulliLogProb { probs, mask, mode } => {
                let (probs, mode) = (*probs, *mode);
                let mask = mask.clone();
                let g = grad[0];
                let dx: Vec<f64> = self
                    .value(probs)
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&p, &m)| {
                        if p != clamp_prob(p) {
                            return 0.0;
                        }
                        if m {
                            g / p
                        } else if mode == LikelihoodMode::Bernoulli {
                            -g / (1.0 - p)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.add_grad(probs, &dx);
            }
        }
    }

    /// Accumulate parameter gradients into the store (+=).
    pub fn write_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            let Some(grad) = &node.grad else { continue };
            match &node.op {
                Op::Param { idx } => {
                    let t = store.tensor_by_idx_mut(*idx);
                    for (g, c) in t.grad_mut().iter_mut().zip(grad) {
                        *g += c;
                    }
                }
                Op::Gather { idx, rows } => {
                    let t = store.tensor_by_idx_mut(*idx);
                    let cols = t.cols();
                    let buf = t.grad_mut();
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            buf[r * cols + c] += grad[i * cols + c];
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, TensorInit};
    use crate::rng::stream_rng;

    fn toy_store() -> ParamStore {
        let mut rng = stream_rng(42, "init");
        let mut s = ParamStore::new();
        s.register("emb", 6, 3, TensorInit::Embedding, &mut rng)
            .unwrap();
        s.register("w", 3, 2, TensorInit::DenseWeight { fan_in: 3 }, &mut rng)
            .unwrap();
        s.register("b", 1, 2, TensorInit::Zeros, &mut rng).unwrap();
        s
    }

    #[test]
    fn gather_empty_id_list() {
        let s = toy_store();
        let mut g = Graph::new();
        let e = g.gather(&s, "emb", &[]).unwrap();
        assert_eq!(g.value(e).shape(), (0, 3));
    }

    #[test]
    fn gather_duplicate_ids_give_identical_rows() {
        let s = toy_store();
        let mut g = Graph::new();
        let e = g.gather(&s, "emb", &[2, 2, 5]).unwrap();
        assert_eq!(g.value(e).row(0), g.value(e).row(1));
        assert_eq!(g.value(e).row(0), s.get("emb").unwrap().row(2));
    }

    #[test]
    fn gather_out_of_vocab_uses_row_zero() {
        let s = toy_store();
        let mut g = Graph::new();
        let e = g.gather(&s, "emb", &[99]).unwrap();
        assert_eq!(g.value(e).row(0), s.get("emb").unwrap().row(0));
    }

    #[test]
    fn gather_gradient_scatters_to_looked_up_rows_only() {
        let mut s = toy_store();
        let mut g = Graph::new();
        let e = g.gather(&s, "emb", &[1, 4, 1]).unwrap();
        let sq = g.sum_sq(e);
        g.backward(sq);
        g.write_grads(&mut s);
        let grad = s.get("emb").unwrap().grad().unwrap();
        for r in 0..6 {
            let touched = r == 1 || r == 4;
            let row_nonzero = grad[r * 3..(r + 1) * 3].iter().any(|&v| v != 0.0);
            assert_eq!(row_nonzero, touched, "row {r}");
        }
    }

    #[test]
    fn gather_gradient_matches_finite_differences() {
        let mut s = toy_store();
        let build = |st: &ParamStore| {
            let mut g = Graph::new();
            let e = g.gather(st, "emb", &[1, 4, 1, 3]).unwrap();
            let w = g.param(st, "w").unwrap();
            let h = g.matmul(e, w);
            let sq = g.sum_sq(h);
            g.value(sq).item()
        };
        let mut g = Graph::new();
        let e = g.gather(&s, "emb", &[1, 4, 1, 3]).unwrap();
        let w = g.param(&s, "w").unwrap();
        let h = g.matmul(e, w);
        let sq = g.sum_sq(h);
        g.backward(sq);
        g.write_grads(&mut s);
        let err = grad_check(&mut s, &["emb", "w"], 1e-3, build).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn dense_zero_weights_and_bias_give_zero() {
        let mut rng = stream_rng(0, "init");
        let mut s = ParamStore::new();
        s.register("w", 3, 2, TensorInit::Zeros, &mut rng).unwrap();
        s.register("b", 1, 2, TensorInit::Zeros, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]));
        let out = g.dense(&s, "w", Some("b"), x, Activation::None).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn dense_identity_weights_pass_input_through() {
        let mut rng = stream_rng(0, "init");
        let mut s = ParamStore::new();
        s.register("w", 3, 3, TensorInit::Zeros, &mut rng).unwrap();
        for i in 0..3 {
            s.get_mut("w").unwrap().set(i, i, 1.0);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![0.5, -2.0, 3.25]]));
        let out = g.dense(&s, "w", None, x, Activation::None).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -2.0, 3.25]);
    }

    #[test]
    fn dense_shape_mismatch_rejected() {
        let s = toy_store();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![1.0, 2.0]])); // needs 3 cols
        match g.dense(&s, "w", Some("b"), x, Activation::None) {
            Err(NumericError::ShapeMismatch { .. }) => {}
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn dense_random_layer_gradient_matches_finite_differences() {
        let mut s = toy_store();
        let x = Tensor::from_rows(&[vec![0.7, -0.2, 1.1], vec![-1.0, 0.4, 0.9]]);
        let build = |st: &ParamStore| {
            let mut g = Graph::new();
            let xn = g.input(x.clone());
            let out = g.dense(st, "w", Some("b"), xn, Activation::Relu).unwrap();
            let sq = g.sum_sq(out);
            g.value(sq).item()
        };
        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let out = g.dense(&s, "w", Some("b"), xn, Activation::Relu).unwrap();
        let sq = g.sum_sq(out);
        g.backward(sq);
        g.write_grads(&mut s);
        let err = grad_check(&mut s, &["w", "b"], 1e-3, build).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn softmax_and_masked_softmax_gradients() {
        let mut rng = stream_rng(5, "init");
        let mut s = ParamStore::new();
        s.register("x", 1, 4, TensorInit::DenseWeight { fan_in: 1 }, &mut rng)
            .unwrap();
        let mask = [true, false, true, true];

        let build = |st: &ParamStore| {
            let mut g = Graph::new();
            let xn = g.param(st, "x").unwrap();
            let sm = g.softmax_rows(xn);
            let ms = g.masked_softmax(xn, &mask);
            let both = g.concat_cols(&[sm, ms]);
            let w = g.input(Tensor::from_rows(&[(1..=8).map(|i| i as f64 * 0.3).collect()]));
            let prod = g.matmul_nt(both, w);
            g.value(prod).item()
        };

        let mut g = Graph::new();
        let xn = g.param(&s, "x").unwrap();
        let sm = g.softmax_rows(xn);
        let ms = g.masked_softmax(xn, &mask);
        let both = g.concat_cols(&[sm, ms]);
        let w = g.input(Tensor::from_rows(&[(1..=8).map(|i| i as f64 * 0.3).collect()]));
        let prod = g.matmul_nt(both, w);
        g.backward(prod);
        g.write_grads(&mut s);
        let err = grad_check(&mut s, &["x"], 1e-3, build).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn masked_softmax_masked_entries_are_exactly_zero() {
        let s = toy_store();
        let _ = &s;
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![1.0, 50.0, -2.0]]));
        let m = g.masked_softmax(x, &[true, false, true]);
        let v = g.value(m);
        assert_eq!(v.at(0, 1), 0.0);
        assert!((v.at(0, 0) + v.at(0, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bce_and_bernoulli_log_prob_gradients() {
        let mut rng = stream_rng(9, "init");
        let mut s = ParamStore::new();
        s.register("z", 1, 3, TensorInit::DenseWeight { fan_in: 1 }, &mut rng)
            .unwrap();
        let mask = [true, false, true];

        let build = |st: &ParamStore| {
            let mut g = Graph::new();
            let z = g.param(st, "z").unwrap();
            let p = g.sigmoid(z);
            let lp = g.bernoulli_log_prob(p, &mask, LikelihoodMode::Bernoulli);
            let first = g.reshape(p, 3, 1);
            let picker = g.input(Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]));
            let p0 = g.matmul(picker, first);
            let ce = g.bce(p0, 1.0);
            let total = g.add_n(&[lp, ce]);
            g.value(total).item()
        };

        let mut g = Graph::new();
        let z = g.param(&s, "z").unwrap();
        let p = g.sigmoid(z);
        let lp = g.bernoulli_log_prob(p, &mask, LikelihoodMode::Bernoulli);
        let first = g.reshape(p, 3, 1);
        let picker = g.input(Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]));
        let p0 = g.matmul(picker, first);
        let ce = g.bce(p0, 1.0);
        let total = g.add_n(&[lp, ce]);
        g.backward(total);
        g.write_grads(&mut s);
        let err = grad_check(&mut s, &["z"], 1e-3, build).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn selected_only_mode_ignores_unselected_terms() {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&[vec![0.25, 0.5]]));
        let lp = g.bernoulli_log_prob(p, &[true, false], LikelihoodMode::SelectedOnly);
        assert!((g.value(lp).item() - 0.25f64.ln()).abs() < 1e-12);
        let lp2 = g.bernoulli_log_prob(p, &[true, false], LikelihoodMode::Bernoulli);
        assert!((g.value(lp2).item() - (0.25f64.ln() + 0.5f64.ln())).abs() < 1e-12);
    }
}
