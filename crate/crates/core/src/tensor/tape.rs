//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order. Values live on the
//! tape and are addressed through copyable [`Var`] handles; because each op
//! can only reference vars that already exist, the record is topologically
//! ordered by construction and [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Result, RocpError};
use crate::tensor::{Matrix, SparseMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    GatherEntries(Var, Vec<(usize, usize)>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    Dropout(Var, Matrix),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        rows: Vec<usize>,
        probs: Matrix,
    },
    SoftRank(Var, f64),
    Attention {
        features: Var,
        src: Var,
        dst: Var,
        adj: Arc<SparseMatrix>,
        slope: f64,
        pre: Vec<f64>,
        alpha: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> RocpError {
    RocpError::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Per-edge attention weights for a neighborhood softmax over `adj`'s stored entries.
///
/// Entry `(i, j)` scores `leaky_relu(dst[i] + src[j])`; weights are normalized over row `i`.
/// Returns `(pre_activation, weights)`, both aligned with `adj.values()`.
pub fn attention_weights(
    adj: &SparseMatrix,
    src: &Matrix,
    dst: &Matrix,
    slope: f64,
) -> (Vec<f64>, Vec<f64>) {
    let nnz = adj.nnz();
    let mut pre = Vec::with_capacity(nnz);
    let mut alpha = Vec::with_capacity(nnz);
    for i in 0..adj.rows() {
        let (cols, _) = adj.row(i);
        let start = alpha.len();
        let mut max = f64::NEG_INFINITY;
        for &j in cols {
            let e = dst.as_slice()[i] + src.as_slice()[j];
            pre.push(e);
            let z = if e > 0.0 { e } else { slope * e };
            max = max.max(z);
            alpha.push(z);
        }
        let mut total = 0.0;
        for a in &mut alpha[start..] {
            *a = (*a - max).exp();
            total += *a;
        }
        for a in &mut alpha[start..] {
            *a /= total;
        }
    }
    (pre, alpha)
}

/// Pairwise-sigmoid soft ranks: `1 + Σ_{j≠i} σ((s_i − s_j)/δ)`.
pub fn soft_rank_values(scores: &[f64], delta: f64) -> Vec<f64> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &si)| {
            1.0 + scores
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &sj)| sigmoid((si - sj) / delta))
                .sum::<f64>()
        })
        .collect()
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

    /// Clears the record so the tape can be reused for another pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Sparse-dense product; the sparse operand is treated as constant.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let value = s.spmm(self.value(d))?;
        let rg = self.rg(d);
        Ok(self.push(value, Op::SpMM(Arc::clone(s), d), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let value = x.zip_map(y, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("sub", x, y));
        }
        let value = x.zip_map(y, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x, y));
        }
        let value = x.zip_map(y, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.as_slice()) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Adds a `1 × 1` var to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, sv) = (self.value(a), self.value(s));
        if sv.shape() != (1, 1) {
            return Err(shape_err("add_scalar", x, sv));
        }
        let c = sv.item();
        let value = x.map(|v| v + c);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::AddScalar(a, s), rg))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(value, Op::AddConst(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let value = self
            .value(a)
            .map(|v| if v > 0.0 { v } else { alpha * v.exp_m1() });
        let rg = self.rg(a);
        self.push(value, Op::Elu(a, alpha), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(shape_err("concat_cols", x, y));
        }
        let value = Matrix::from_fn(x.rows(), x.cols() + y.cols(), |i, j| {
            if j < x.cols() {
                x.get(i, j)
            } else {
                y.get(i, j - x.cols())
            }
        });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(RocpError::InvalidArgument(format!(
                "gather_rows: row {r} out of range for {} rows",
                x.rows()
            )));
        }
        let value = x.select_rows(rows);
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, rows.to_vec()), rg))
    }

    /// Collects the entries `(row, col)` into a column vector.
    pub fn gather_entries(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&(r, c)) = entries
            .iter()
            .find(|&&(r, c)| r >= x.rows() || c >= x.cols())
        {
            return Err(RocpError::InvalidArgument(format!(
                "gather_entries: ({r}, {c}) out of range for {:?}",
                x.shape()
            )));
        }
        let vals: Vec<f64> = entries.iter().map(|&(r, c)| x.get(r, c)).collect();
        let value = Matrix::column(&vals);
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherEntries(a, entries.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(RocpError::Empty("tensor in reduce_mean"));
        }
        let value = Matrix::scalar(x.sum() / x.len() as f64);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Mean of each row, as a column vector.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(RocpError::Empty("row in row_mean"));
        }
        let k = x.cols() as f64;
        let vals: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().sum::<f64>() / k).collect();
        let value = Matrix::column(&vals);
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowMean(a), rg))
    }

    /// Inverted dropout: survivors are scaled by `1/(1−p)`. `p = 0` returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(RocpError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let x = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        let value = x.zip_map(&mask, |v, m| v * m);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    /// Mean negative log-softmax of the labelled class over `rows`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        rows: &[usize],
    ) -> Result<Var> {
        if rows.is_empty() {
            return Err(RocpError::Empty("mask in masked_cross_entropy"));
        }
        let x = self.value(logits);
        if labels.len() != x.rows() {
            return Err(RocpError::InvalidArgument(format!(
                "{} labels for {} logit rows",
                labels.len(),
                x.rows()
            )));
        }
        let mut loss = 0.0;
        for &r in rows {
            if r >= x.rows() {
                return Err(RocpError::InvalidArgument(format!(
                    "mask row {r} out of range for {} rows",
                    x.rows()
                )));
            }
            let y = labels[r];
            if y >= x.cols() {
                return Err(RocpError::LabelOutOfRange {
                    node: r,
                    label: y,
                    classes: x.cols(),
                });
            }
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let probs = softmax_rows(&x.select_rows(rows));
        let value = Matrix::scalar(loss / rows.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                rows: rows.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Pairwise-sigmoid soft ranks of every entry of `a` (treated as a flat vector).
    pub fn soft_rank(&mut self, a: Var, delta: f64) -> Result<Var> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(RocpError::InvalidArgument(format!(
                "dispersion must be positive, got {delta}"
            )));
        }
        let x = self.value(a);
        let ranks = soft_rank_values(x.as_slice(), delta);
        let value = Matrix::from_vec(x.rows(), x.cols(), ranks)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SoftRank(a, delta), rg))
    }

    /// Neighborhood attention aggregation: row `i` of the output is
    /// `Σ_j α_ij · features_j` over the stored entries of `adj` row `i`.
    pub fn attention_aggregate(
        &mut self,
        features: Var,
        src: Var,
        dst: Var,
        adj: &Arc<SparseMatrix>,
        slope: f64,
    ) -> Result<Var> {
        let (h, s, d) = (self.value(features), self.value(src), self.value(dst));
        let n = adj.rows();
        if h.rows() != adj.cols() || s.shape() != (adj.cols(), 1) || d.shape() != (n, 1) {
            return Err(shape_err("attention_aggregate", h, s));
        }
        let (pre, alpha) = attention_weights(adj, s, d, slope);
        let f = h.cols();
        let mut value = Matrix::zeros(n, f);
        for i in 0..n {
            let (cols, _) = adj.row(i);
            let off = adj.row_offsets()[i];
            let out = value.row_mut(i);
            for (e, &j) in cols.iter().enumerate() {
                let a = alpha[off + e];
                for (o, &hv) in out.iter_mut().zip(h.row(j)) {
                    *o += a * hv;
                }
            }
        }
        let rg = self.rg(features) || self.rg(src) || self.rg(dst);
        Ok(self.push(
            value,
            Op::Attention {
                features,
                src,
                dst,
                adj: Arc::clone(adj),
                slope,
                pre,
                alpha,
            },
            rg,
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// A tape can be differentiated once; call [`Tape::reset`] before reuse.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(RocpError::TapeConsumed);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(RocpError::NonScalarLoss(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: Matrix| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if nodes[a.0].requires_grad {
                    acc(*a, g.matmul_t(bv));
                }
                if nodes[b.0].requires_grad {
                    acc(*b, av.t_matmul(g));
                }
            }
            Op::SpMM(s, d) => acc(*d, s.t_spmm(g)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, g.zip_map(bv, |x, y| x * y));
                acc(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                let mut col_sums = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (s, v) in col_sums.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                acc(*r, col_sums);
            }
            Op::AddScalar(a, s) => {
                acc(*a, g.clone());
                acc(*s, Matrix::scalar(g.sum()));
            }
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Scale(a, f) => acc(*a, g.map(|v| v * f)),
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = &nodes[a.0].value;
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { slope * gv }));
            }
            Op::Elu(a, alpha) => {
                let x = &nodes[a.0].value;
                acc(
                    *a,
                    g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { gv * alpha * xv.exp() }),
                );
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].value.cols();
                let cb = nodes[b.0].value.cols();
                acc(*a, Matrix::from_fn(g.rows(), ca, |i, j| g.get(i, j)));
                acc(*b, Matrix::from_fn(g.rows(), cb, |i, j| g.get(i, ca + j)));
            }
            Op::GatherRows(a, rows) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut dx = Matrix::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for (d, v) in dx.row_mut(src).iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                acc(*a, dx);
            }
            Op::GatherEntries(a, entries) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut dx = Matrix::zeros(r, c);
                for (k, &(i, j)) in entries.iter().enumerate() {
                    dx.set(i, j, dx.get(i, j) + g.as_slice()[k]);
                }
                acc(*a, dx);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::RowMean(a) => {
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, Matrix::from_fn(r, c, |i, _| g.as_slice()[i] / c as f64));
            }
            Op::Dropout(a, mask) => acc(*a, g.zip_map(mask, |gv, m| gv * m)),
            Op::CrossEntropy {
                logits,
                labels,
                rows,
                probs,
            } => {
                let (r, c) = nodes[logits.0].value.shape();
                let scale = g.item() / rows.len() as f64;
                let mut dx = Matrix::zeros(r, c);
                for (k, &row) in rows.iter().enumerate() {
                    let d = dx.row_mut(row);
                    for (j, (dv, &p)) in d.iter_mut().zip(probs.row(k)).enumerate() {
                        let target = if j == labels[row] { 1.0 } else { 0.0 };
                        *dv += scale * (p - target);
                    }
                }
                acc(*logits, dx);
            }
            Op::SoftRank(a, delta) => {
                let s = nodes[a.0].value.as_slice();
                let gs = g.as_slice();
                let mut ds = vec![0.0; s.len()];
                for i in 0..s.len() {
                    for j in (i + 1)..s.len() {
                        let sg = sigmoid((s[i] - s[j]) / delta);
                        let w = sg * (1.0 - sg) / delta * (gs[i] - gs[j]);
                        ds[i] += w;
                        ds[j] -= w;
                    }
                }
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, Matrix::from_vec(r, c, ds).expect("shape preserved"));
            }
            Op::Attention {
                features,
                src,
                dst,
                adj,
                slope,
                pre,
                alpha,
            } => {
                let h = &nodes[features.0].value;
                let mut dh = Matrix::zeros(h.rows(), h.cols());
                let mut dsrc = Matrix::zeros(adj.cols(), 1);
                let mut ddst = Matrix::zeros(adj.rows(), 1);
                for i in 0..adj.rows() {
                    let (cols, _) = adj.row(i);
                    let off = adj.row_offsets()[i];
                    let gi = g.row(i);
                    let dalpha: Vec<f64> = cols
                        .iter()
                        .map(|&j| gi.iter().zip(h.row(j)).map(|(a, b)| a * b).sum())
                        .collect();
                    let weighted: f64 = dalpha
                        .iter()
                        .enumerate()
                        .map(|(e, d)| alpha[off + e] * d)
                        .sum();
                    for (e, &j) in cols.iter().enumerate() {
                        let a = alpha[off + e];
                        for (d, &gv) in dh.row_mut(j).iter_mut().zip(gi) {
                            *d += a * gv;
                        }
                        let dz = a * (dalpha[e] - weighted);
                        let de = if pre[off + e] > 0.0 { dz } else { slope * dz };
                        ddst.as_mut_slice()[i] += de;
                        dsrc.as_mut_slice()[j] += de;
                    }
                }
                acc(*features, dh);
                acc(*src, dsrc);
                acc(*dst, ddst);
            }
        }
    }
}
