//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every forward op in execution order, so node indices
//! are already a topological order. [`Tape::backward`] walks them in
//! reverse, then clears the tape.

use std::sync::Arc;

use crate::error::{GipError, Result};
use crate::graph::SparseAdjacency;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor used by normalization ops for zero rows and constant columns.
pub const NORM_EPS: f64 = 1e-8;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseAdjacency<F>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBiasRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    SegmentSum(Var, Arc<[usize]>),
    RowL2Normalize(Var, Vec<F>),
    BatchStandardize(Var, Vec<F>),
    Transpose(Var),
    Sum(Var),
    LogSoftmaxRows(Var),
    LogSigmoid(Var),
    Detach,
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, indexed by the [`Var`]s of the tape that produced them.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: (usize, usize)) -> Tensor<F> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.0, like.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GipError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn record(&mut self, op: &'static str, value: Tensor<F>, node_op: Op<F>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GipError::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Result<Var> {
        self.record("param", value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.record("constant", value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.record("matmul", out, Op::MatMul(a, b), rg)
    }

    pub fn spmm(&mut self, adj: &Arc<SparseAdjacency<F>>, x: Var) -> Result<Var> {
        let out = adj.apply(self.value(x))?;
        let rg = self.rg(&[x]);
        self.record("spmm", out, Op::SpMM(Arc::clone(adj), x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.record("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.record("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.record("mul", out, Op::Mul(a, b), rg)
    }

    /// Adds a `1 × cols` bias to every row of `x`.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(GipError::shape(
                "add_bias_row",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o = *o + b;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.record("add_bias_row", out, Op::AddBiasRow(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.record("scale", out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(&[x]);
        self.record("relu", out, Op::Relu(x), rg)
    }

    /// Sums rows sharing a segment id. Ids must be non-decreasing and below
    /// `num_segments`.
    pub fn segment_sum(&mut self, x: Var, segments: &Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if segments.len() != xv.rows() {
            return Err(GipError::shape(
                "segment_sum",
                format!("{} segment ids for {} rows", segments.len(), xv.rows()),
            ));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
            return Err(GipError::shape(
                "segment_sum",
                format!("segment id {bad} out of range {num_segments}"),
            ));
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(GipError::shape("segment_sum", "segment ids not sorted"));
        }
        let mut out = Tensor::zeros(num_segments, xv.cols());
        for (r, &s) in segments.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        let rg = self.rg(&[x]);
        self.record("segment_sum", out, Op::SegmentSum(x, Arc::clone(segments)), rg)
    }

    /// Scales each row to unit Euclidean norm; norms below the floor are clamped.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(GipError::shape("row_l2_normalize", "empty input"));
        }
        let eps = F::of(NORM_EPS);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = xv.row(r).iter().map(|&v| v * v).sum::<F>().sqrt().max(eps);
            out.row_mut(r).iter_mut().for_each(|v| *v = *v / n);
            norms.push(n);
        }
        let rg = self.rg(&[x]);
        self.record("row_l2_normalize", out, Op::RowL2Normalize(x, norms), rg)
    }

    /// Per-column zero mean and unit population variance; standard
    /// deviations below the floor are clamped.
    pub fn batch_standardize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if n < 2 {
            return Err(GipError::shape("batch_standardize", format!("{n} rows, need at least 2")));
        }
        let nf = F::of(n as f64);
        let eps = F::of(NORM_EPS);
        let mut mean = vec![F::zero(); d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        let mut var = vec![F::zero(); d];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let std: Vec<F> = var.iter().map(|&s| (s / nf).sqrt().max(eps)).collect();
        let mut out = xv.clone();
        for r in 0..n {
            for ((o, &m), &s) in out.row_mut(r).iter_mut().zip(&mean).zip(&std) {
                *o = (*o - m) / s;
            }
        }
        let rg = self.rg(&[x]);
        self.record("batch_standardize", out, Op::BatchStandardize(x, std), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.record("transpose", out, Op::Transpose(x), rg)
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.record("sum", out, Op::Sum(x), rg)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let rg = self.rg(&[x]);
        self.record("log_softmax_rows", out, Op::LogSoftmaxRows(x), rg)
    }

    /// `log σ(x)`, evaluated as `min(x, 0) − ln(1 + e^{−|x|})`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.min(F::zero()) - (-v.abs()).exp().ln_1p());
        let rg = self.rg(&[x]);
        self.record("log_sigmoid", out, Op::LogSigmoid(x), rg)
    }

    /// Stop-gradient: same value, no gradient flows back to `x`.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).clone();
        self.record("detach", out, Op::Detach, false)
    }

    /// Differentiates the scalar `loss` and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(GipError::shape("backward", format!("loss has shape {shape:?}, need (1, 1)")));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &self.nodes[v.0].value;
            let mut contribs: Vec<(Var, Tensor<F>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf | Op::Detach => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        contribs.push((*a, g.matmul_t(val(*b))?));
                    }
                    if self.nodes[b.0].requires_grad {
                        contribs.push((*b, val(*a).t_matmul(&g)?));
                    }
                }
                Op::SpMM(adj, x) => contribs.push((*x, adj.apply(&g)?)),
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g));
                }
                Op::Sub(a, b) => {
                    contribs.push((*b, g.map(|v| -v)));
                    contribs.push((*a, g));
                }
                Op::Mul(a, b) => {
                    contribs.push((*a, g.zip_map(val(*b), |gv, bv| gv * bv)));
                    contribs.push((*b, g.zip_map(val(*a), |gv, av| gv * av)));
                }
                Op::AddBiasRow(x, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    contribs.push((*bias, gb));
                    contribs.push((*x, g));
                }
                Op::Scale(x, c) => contribs.push((*x, g.map(|v| v * *c))),
                Op::Relu(x) => {
                    contribs.push((*x, g.zip_map(val(*x), |gv, xv| if xv > F::zero() { gv } else { F::zero() })))
                }
                Op::SegmentSum(x, segments) => {
                    let xv = val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &s) in segments.iter().enumerate() {
                        gx.row_mut(r).copy_from_slice(g.row(s));
                    }
                    contribs.push((*x, gx));
                }
                Op::RowL2Normalize(x, norms) => {
                    let y = &node.value;
                    let eps = F::of(NORM_EPS);
                    let mut gx = g.clone();
                    for (r, &n) in norms.iter().enumerate() {
                        let row = gx.row_mut(r);
                        if n > eps {
                            let dot: F = row.iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                            for (o, &yv) in row.iter_mut().zip(y.row(r)) {
                                *o = (*o - yv * dot) / n;
                            }
                        } else {
                            row.iter_mut().for_each(|o| *o = *o / n);
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::BatchStandardize(x, std) => {
                    let y = &node.value;
                    let (n, d) = y.shape();
                    let nf = F::of(n as f64);
                    let eps = F::of(NORM_EPS);
                    let mut mean_g = vec![F::zero(); d];
                    let mut mean_gy = vec![F::zero(); d];
                    for r in 0..n {
                        for c in 0..d {
                            mean_g[c] = mean_g[c] + g.get(r, c);
                            mean_gy[c] = mean_gy[c] + g.get(r, c) * y.get(r, c);
                        }
                    }
                    mean_g.iter_mut().for_each(|v| *v = *v / nf);
                    mean_gy.iter_mut().for_each(|v| *v = *v / nf);
                    let mut gx = Tensor::zeros(n, d);
                    for r in 0..n {
                        for c in 0..d {
                            let s = std[c];
                            let v = if s > eps {
                                (g.get(r, c) - mean_g[c] - y.get(r, c) * mean_gy[c]) / s
                            } else {
                                (g.get(r, c) - mean_g[c]) / s
                            };
                            gx.set(r, c, v);
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::Transpose(x) => contribs.push((*x, g.transpose())),
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    contribs.push((*x, Tensor::filled(r, c, g.get(0, 0))));
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let total: F = g.row(r).iter().copied().sum();
                        for (o, &yv) in gx.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o = *o - yv.exp() * total;
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::LogSigmoid(x) => {
                    // d/dx log σ(x) = σ(−x)
                    let gx = g.zip_map(val(*x), |gv, xv| {
                        let s = if xv >= F::zero() {
                            let e = (-xv).exp();
                            e / (F::one() + e)
                        } else {
                            F::one() / (F::one() + xv.exp())
                        };
                        gv * s
                    });
                    contribs.push((*x, gx));
                }
            }
            for (v, c) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        self.nodes.clear();
        Ok(Gradients { grads })
    }
}
