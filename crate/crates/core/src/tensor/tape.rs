use std::sync::Arc;

use rand::Rng;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};
use crate::graph::CsrGraph;

/// Floor applied before taking the log of a predicted probability.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are cheap to copy and only meaningful for the tape that issued
/// them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Elementwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Sigmoid,
    Swish,
    Gelu,
}

#[derive(Clone, Copy, Debug)]
enum Activation {
    Relu,
    Sigmoid,
    Swish,
    Gelu,
    LeakyRelu(f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Swish => x * sigmoid(x),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Activate(usize, Activation),
    Transpose(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    RowSoftmax(usize),
    Spmm {
        graph: Arc<CsrGraph>,
        h: usize,
    },
    EdgeScores {
        graph: Arc<CsrGraph>,
        target: usize,
        neighbor: usize,
    },
    EdgeSoftmax {
        graph: Arc<CsrGraph>,
        scores: usize,
    },
    EdgeAggregate {
        graph: Arc<CsrGraph>,
        alpha: usize,
        h: usize,
    },
    Mix {
        logit: usize,
        a: usize,
        b: usize,
    },
    MaskScale {
        x: usize,
        mask: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    Sum(usize),
    NllSum {
        pred: usize,
        targets: Vec<(usize, usize)>,
    },
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Every operation is pushed after its inputs, so reverse recording order is
/// a valid reverse topological order and [`Tape::backward`] visits each node
/// once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn dim_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Dimension { op, left, right }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Tensor {
        self.record(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, false)
    }

    #[inline]
    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    #[inline]
    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.nodes[t.id].grad.as_ref()
    }

    #[inline]
    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    fn record(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Tensor {
        let t = Tensor {
            id: self.nodes.len(),
            rows: value.rows(),
            cols: value.cols(),
        };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        t
    }

    fn push(&mut self, value: Matrix, inputs: &[Tensor], op: Op) -> Tensor {
        let requires_grad = inputs.iter().any(|t| self.nodes[t.id].requires_grad);
        self.record(value, requires_grad, op)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(dim_err("matmul", a.shape(), b.shape()));
        }
        let value = gemm(self.value(a), false, self.value(b), false);
        Ok(self.push(value, &[a, b], Op::MatMul(a.id, b.id)))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(dim_err("add", a.shape(), b.shape()));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, &[a, b], Op::Add(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(dim_err("mul", a.shape(), b.shape()));
        }
        let mut value = self.value(a).clone();
        for (x, y) in value.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x *= y;
        }
        Ok(self.push(value, &[a, b], Op::Mul(a.id, b.id)))
    }

    pub fn scale(&mut self, a: Tensor, factor: f64) -> Tensor {
        let value = self.value(a).scaled(factor);
        self.push(value, &[a], Op::Scale(a.id, factor))
    }

    fn activate(&mut self, a: Tensor, act: Activation) -> Tensor {
        let value = self.value(a).map(|x| act.apply(x));
        self.push(value, &[a], Op::Activate(a.id, act))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.activate(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.activate(a, Activation::Sigmoid)
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, a: Tensor) -> Tensor {
        self.activate(a, Activation::Swish)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        self.activate(a, Activation::Gelu)
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        self.activate(a, Activation::LeakyRelu(slope))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Tensor, b: Option<Tensor>) -> Result<Tensor> {
        let binary = |b: Option<Tensor>| {
            b.ok_or_else(|| Error::Contract(format!("{op:?} needs a second operand")))
        };
        match op {
            Elementwise::Add => self.add(a, binary(b)?),
            Elementwise::Mul => self.mul(a, binary(b)?),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Swish => Ok(self.swish(a)),
            Elementwise::Gelu => Ok(self.gelu(a)),
        }
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).transpose();
        self.push(value, &[a], Op::Transpose(a.id))
    }

    /// Row-wise layer normalization followed by a `1×d` affine map.
    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor, eps: f64) -> Result<Tensor> {
        let d = x.cols;
        if d == 0 {
            return Err(Error::Contract("layer_norm over zero columns".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        if gain.shape() != (1, d) {
            return Err(dim_err("layer_norm gain", x.shape(), gain.shape()));
        }
        if bias.shape() != (1, d) {
            return Err(dim_err("layer_norm bias", x.shape(), bias.shape()));
        }
        let xv = self.value(x);
        let mut normalized = Matrix::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut value = normalized.clone();
        for r in 0..x.rows {
            for (c, v) in value.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[c] + b[c];
            }
        }
        let op = Op::LayerNorm {
            x: x.id,
            gain: gain.id,
            bias: bias.id,
            normalized,
            inv_std,
        };
        Ok(self.push(value, &[x, gain, bias], op))
    }

    /// Numerically stable softmax along each row. Entries where `mask` is
    /// `false` are excluded and come out as exactly zero.
    pub fn row_softmax(&mut self, x: Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        if let Some(m) = mask {
            if m.len() != x.rows * x.cols {
                return Err(dim_err("row_softmax mask", x.shape(), (m.len(), 1)));
            }
        }
        let xv = self.value(x);
        let mut value = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let valid = |c: usize| mask.is_none_or(|m| m[r * x.cols + c]);
            let row = xv.row(r);
            let max = (0..x.cols)
                .filter(|&c| valid(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let out = value.row_mut(r);
            let mut total = 0.0;
            for c in (0..x.cols).filter(|&c| valid(c)) {
                out[c] = (row[c] - max).exp();
                total += out[c];
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(value, &[x], Op::RowSoftmax(x.id)))
    }

    /// Sparse-dense product `W · H` where `W` is the (optionally weighted)
    /// adjacency of `graph`; missing weights count as 1.
    pub fn spmm(&mut self, graph: &Arc<CsrGraph>, h: Tensor) -> Result<Tensor> {
        if graph.n() != h.rows {
            return Err(dim_err("spmm", (graph.n(), graph.n()), h.shape()));
        }
        let hv = self.value(h);
        let mut value = Matrix::zeros(h.rows, h.cols);
        for i in 0..graph.n() {
            let out = value.row_mut(i);
            for k in graph.row_range(i) {
                let w = graph.weight_at(k);
                for (o, v) in out.iter_mut().zip(hv.row(graph.col_indices()[k])) {
                    *o += w * v;
                }
            }
        }
        let op = Op::Spmm {
            graph: Arc::clone(graph),
            h: h.id,
        };
        Ok(self.push(value, &[h], op))
    }

    /// Per-edge scores `target[i] + neighbor[j]` for every stored edge
    /// `(i, j)`, as an `nnz × 1` column in CSR order.
    pub fn edge_scores(&mut self, graph: &Arc<CsrGraph>, target: Tensor, neighbor: Tensor) -> Result<Tensor> {
        let n = graph.n();
        if target.shape() != (n, 1) || neighbor.shape() != (n, 1) {
            return Err(dim_err("edge_scores", target.shape(), neighbor.shape()));
        }
        let t = self.value(target).as_slice();
        let u = self.value(neighbor).as_slice();
        let mut data = Vec::with_capacity(graph.nnz());
        for i in 0..n {
            for k in graph.row_range(i) {
                data.push(t[i] + u[graph.col_indices()[k]]);
            }
        }
        let value = Matrix::from_vec(data.len(), 1, data)?;
        let op = Op::EdgeScores {
            graph: Arc::clone(graph),
            target: target.id,
            neighbor: neighbor.id,
        };
        Ok(self.push(value, &[target, neighbor], op))
    }

    /// Softmax of an `nnz × 1` edge column over each node's neighborhood.
    pub fn edge_softmax(&mut self, graph: &Arc<CsrGraph>, scores: Tensor) -> Result<Tensor> {
        if scores.shape() != (graph.nnz(), 1) {
            return Err(dim_err("edge_softmax", (graph.nnz(), 1), scores.shape()));
        }
        let s = self.value(scores).as_slice();
        let mut data = vec![0.0; s.len()];
        for i in 0..graph.n() {
            let range = graph.row_range(i);
            if range.is_empty() {
                continue;
            }
            let max = s[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in range.clone() {
                data[k] = (s[k] - max).exp();
                total += data[k];
            }
            for k in range {
                data[k] /= total;
            }
        }
        let value = Matrix::from_vec(data.len(), 1, data)?;
        let op = Op::EdgeSoftmax {
            graph: Arc::clone(graph),
            scores: scores.id,
        };
        Ok(self.push(value, &[scores], op))
    }

    /// `out[i] = Σ_k alpha[k] · h[j_k]` over the stored edges `(i, j_k)`.
    pub fn edge_aggregate(&mut self, graph: &Arc<CsrGraph>, alpha: Tensor, h: Tensor) -> Result<Tensor> {
        if alpha.shape() != (graph.nnz(), 1) {
            return Err(dim_err("edge_aggregate", (graph.nnz(), 1), alpha.shape()));
        }
        if h.rows != graph.n() {
            return Err(dim_err("edge_aggregate", (graph.n(), graph.n()), h.shape()));
        }
        let a = self.value(alpha).as_slice();
        let hv = self.value(h);
        let mut value = Matrix::zeros(h.rows, h.cols);
        for i in 0..graph.n() {
            let out = value.row_mut(i);
            for k in graph.row_range(i) {
                for (o, v) in out.iter_mut().zip(hv.row(graph.col_indices()[k])) {
                    *o += a[k] * v;
                }
            }
        }
        let op = Op::EdgeAggregate {
            graph: Arc::clone(graph),
            alpha: alpha.id,
            h: h.id,
        };
        Ok(self.push(value, &[alpha, h], op))
    }

    /// Convex combination `s·a + (1 − s)·b` with `s = sigmoid(logit)` and
    /// `logit` a `1×1` tensor.
    pub fn mix(&mut self, logit: Tensor, a: Tensor, b: Tensor) -> Result<Tensor> {
        if logit.shape() != (1, 1) {
            return Err(dim_err("mix logit", (1, 1), logit.shape()));
        }
        if a.shape() != b.shape() {
            return Err(dim_err("mix", a.shape(), b.shape()));
        }
        let s = sigmoid(self.value(logit).item());
        let mut value = self.value(a).scaled(s);
        for (v, y) in value.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *v += (1.0 - s) * y;
        }
        let op = Op::Mix {
            logit: logit.id,
            a: a.id,
            b: b.id,
        };
        Ok(self.push(value, &[logit, a, b], op))
    }

    /// Inverted dropout. Identity when not training or when `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Tensor, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.rows * x.cols)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, &[x], Op::MaskScale { x: x.id, mask }))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(dim_err("concat_cols", first.shape(), bad.shape()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                value.row_mut(r)[offset..offset + p.cols].copy_from_slice(self.value(*p).row(r));
                offset += p.cols;
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, parts, Op::ConcatCols(ids)))
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, &[a], Op::Sum(a.id))
    }

    /// `Σ −ln max(pred[r, c], 1e-12)` over the `(row, column)` pairs in
    /// `targets`.
    pub fn nll_sum(&mut self, pred: Tensor, targets: &[(usize, usize)]) -> Result<Tensor> {
        let pv = self.value(pred);
        let mut total = 0.0;
        for &(r, c) in targets {
            if r >= pred.rows || c >= pred.cols {
                return Err(dim_err("nll_sum target", pred.shape(), (r, c)));
            }
            total -= pv.get(r, c).max(LOG_CLAMP).ln();
        }
        let op = Op::NllSum {
            pred: pred.id,
            targets: targets.to_vec(),
        };
        Ok(self.push(Matrix::scalar(total), &[pred], op))
    }

    /// Clears every accumulated gradient and re-arms [`Tape::backward`].
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate
    /// additively into every reachable tensor that requires them.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        self.backward_done = true;
        if !self.nodes[loss.id].requires_grad {
            return Ok(());
        }
        self.nodes[loss.id].grad = Some(Matrix::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(id, &g);
            self.nodes[id].grad = Some(g);
            for (input, delta) in contributions {
                let node = &mut self.nodes[input];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &Matrix) -> Vec<(usize, Matrix)> {
        let need = |i: usize| self.nodes[i].requires_grad;
        let val = |i: usize| &self.nodes[i].value;
        let mut out = Vec::new();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(*a) {
                    out.push((*a, gemm(g, false, val(*b), true)));
                }
                if need(*b) {
                    out.push((*b, gemm(val(*a), true, g, false)));
                }
            }
            Op::Add(a, b) => {
                for &i in [a, b] {
                    if need(i) {
                        out.push((i, g.clone()));
                    }
                }
            }
            Op::Mul(a, b) => {
                let hadamard = |other: &Matrix| {
                    let mut m = g.clone();
                    for (x, y) in m.as_mut_slice().iter_mut().zip(other.as_slice()) {
                        *x *= y;
                    }
                    m
                };
                if need(*a) {
                    out.push((*a, hadamard(val(*b))));
                }
                if need(*b) {
                    out.push((*b, hadamard(val(*a))));
                }
            }
            Op::Scale(a, factor) => {
                if need(*a) {
                    out.push((*a, g.scaled(*factor)));
                }
            }
            Op::Activate(a, act) => {
                if need(*a) {
                    let mut m = g.clone();
                    for (x, v) in m.as_mut_slice().iter_mut().zip(val(*a).as_slice()) {
                        *x *= act.derivative(*v);
                    }
                    out.push((*a, m));
                }
            }
            Op::Transpose(a) => {
                if need(*a) {
                    out.push((*a, g.transpose()));
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (rows, d) = normalized.shape();
                let gv = val(*gain).as_slice();
                if need(*x) {
                    let mut gx = Matrix::zeros(rows, d);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xhat = normalized.row(r);
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..d {
                            let dxhat = gr[c] * gv[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat[c];
                        }
                        let scale = inv_std[r] / d as f64;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            let dxhat = gr[c] * gv[c];
                            *o = scale * (d as f64 * dxhat - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                        }
                    }
                    out.push((*x, gx));
                }
                if need(*gain) {
                    let mut gg = Matrix::zeros(1, d);
                    for r in 0..rows {
                        for (c, o) in gg.as_mut_slice().iter_mut().enumerate() {
                            *o += g.get(r, c) * normalized.get(r, c);
                        }
                    }
                    out.push((*gain, gg));
                }
                if need(*bias) {
                    let mut gb = Matrix::zeros(1, d);
                    for r in 0..rows {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::RowSoftmax(a) => {
                if need(*a) {
                    let y = &self.nodes[id].value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    out.push((*a, gx));
                }
            }
            Op::Spmm { graph, h } => {
                if need(*h) {
                    let mut gh = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..graph.n() {
                        let gi = g.row(i);
                        for k in graph.row_range(i) {
                            let w = graph.weight_at(k);
                            let j = graph.col_indices()[k];
                            for (o, v) in gh.row_mut(j).iter_mut().zip(gi) {
                                *o += w * v;
                            }
                        }
                    }
                    out.push((*h, gh));
                }
            }
            Op::EdgeScores {
                graph,
                target,
                neighbor,
            } => {
                let ge = g.as_slice();
                let n = graph.n();
                let mut gt = vec![0.0; n];
                let mut gu = vec![0.0; n];
                for i in 0..n {
                    for k in graph.row_range(i) {
                        gt[i] += ge[k];
                        gu[graph.col_indices()[k]] += ge[k];
                    }
                }
                if need(*target) {
                    out.push((*target, Matrix::from_vec(n, 1, gt).expect("column")));
                }
                if need(*neighbor) {
                    out.push((*neighbor, Matrix::from_vec(n, 1, gu).expect("column")));
                }
            }
            Op::EdgeSoftmax { graph, scores } => {
                if need(*scores) {
                    let y = self.nodes[id].value.as_slice();
                    let ge = g.as_slice();
                    let mut gs = vec![0.0; y.len()];
                    for i in 0..graph.n() {
                        let range = graph.row_range(i);
                        let dot: f64 = range.clone().map(|k| y[k] * ge[k]).sum();
                        for k in range {
                            gs[k] = y[k] * (ge[k] - dot);
                        }
                    }
                    out.push((*scores, Matrix::from_vec(gs.len(), 1, gs).expect("column")));
                }
            }
            Op::EdgeAggregate { graph, alpha, h } => {
                let a = val(*alpha).as_slice();
                let hv = val(*h);
                if need(*alpha) {
                    let mut ga = vec![0.0; a.len()];
                    for i in 0..graph.n() {
                        let gi = g.row(i);
                        for k in graph.row_range(i) {
                            let hj = hv.row(graph.col_indices()[k]);
                            ga[k] = gi.iter().zip(hj).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*alpha, Matrix::from_vec(ga.len(), 1, ga).expect("column")));
                }
                if need(*h) {
                    let mut gh = Matrix::zeros(hv.rows(), hv.cols());
                    for i in 0..graph.n() {
                        let gi = g.row(i);
                        for k in graph.row_range(i) {
                            let j = graph.col_indices()[k];
                            for (o, v) in gh.row_mut(j).iter_mut().zip(gi) {
                                *o += a[k] * v;
                            }
                        }
                    }
                    out.push((*h, gh));
                }
            }
            Op::Mix { logit, a, b } => {
                let s = sigmoid(val(*logit).item());
                if need(*logit) {
                    let dot: f64 = g
                        .as_slice()
                        .iter()
                        .zip(val(*a).as_slice().iter().zip(val(*b).as_slice()))
                        .map(|(gv, (x, y))| gv * (x - y))
                        .sum();
                    out.push((*logit, Matrix::scalar(s * (1.0 - s) * dot)));
                }
                if need(*a) {
                    out.push((*a, g.scaled(s)));
                }
                if need(*b) {
                    out.push((*b, g.scaled(1.0 - s)));
                }
            }
            Op::MaskScale { x, mask } => {
                if need(*x) {
                    let mut m = g.clone();
                    for (v, k) in m.as_mut_slice().iter_mut().zip(mask) {
                        *v *= k;
                    }
                    out.push((*x, m));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if need(p) {
                        let gp = Matrix::from_fn(g.rows(), cols, |r, c| g.get(r, offset + c));
                        out.push((p, gp));
                    }
                    offset += cols;
                }
            }
            Op::Sum(a) => {
                if need(*a) {
                    let (r, c) = val(*a).shape();
                    out.push((*a, Matrix::filled(r, c, g.item())));
                }
            }
            Op::NllSum { pred, targets } => {
                if need(*pred) {
                    let pv = val(*pred);
                    let scale = g.item();
                    let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                    for &(r, c) in targets {
                        let p = pv.get(r, c);
                        if p > LOG_CLAMP {
                            gp.set(r, c, gp.get(r, c) - scale / p);
                        }
                    }
                    out.push((*pred, gp));
                }
            }
        }
        out
    }
}
