//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node to a [`Tape`]; nodes only refer to
//! earlier nodes, so walking the tape backwards is a valid reverse
//! topological order. A tape lives for one forward/backward pass.

use std::collections::HashMap;

use rand::Rng;

use super::param::{ParamId, Parameter};
use super::tensor::{log_sum_exp, softmax_in_place, Tensor};
use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running mean/variance kept by a batch-norm layer between passes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogComplementSoftmax { x: Var, labels: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        /// Rows that defined the batch statistics (`None` in eval mode).
        stat_rows: Option<usize>,
    },
    GradReverse(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    GatherRows { x: Var, indices: Vec<usize> },
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a node's value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    /// Binds a parameter to this tape, reusing the leaf on repeated calls.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.leaf(p.value().clone(), true);
        self.params.insert(p.id(), v);
        v
    }

    /// Leaf bound to a parameter id, if the parameter took part in this pass.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1×n` row to every row of an `m×n` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..xs.0 {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.rows(), va.cols(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_values(a, b, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_values(a, b, |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_values(a, b, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Scales row `i` of an `m×n` tensor by entry `i` of an `m×1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xs, cs) = (self.shape(x), self.shape(col));
        if cs != (xs.0, 1) {
            return Err(Error::Dimension {
                op: "mul_col",
                lhs: xs,
                rhs: cs,
            });
        }
        let mut value = self.value(x).clone();
        let c = self.value(col).data().to_vec();
        for (r, &k) in c.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        let rg = self.needs(x) || self.needs(col);
        Ok(self.push(value, Op::MulCol(x, col), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v + k);
        let rg = self.needs(x);
        self.push(value, Op::AddScalar(x), rg)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient flows only where the
    /// input lies strictly inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.needs(x);
        self.push(value, Op::Clamp(x, lo, hi), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).1 < 2 {
            return Err(Error::Shape("softmax needs at least 2 columns".into()));
        }
        let value = self.value(x).softmax_rows();
        let rg = self.needs(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).1 < 2 {
            return Err(Error::Shape("log-softmax needs at least 2 columns".into()));
        }
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.needs(x);
        Ok(self.push(value, Op::LogSoftmaxRows(x), rg))
    }

    /// Per row, `log(1 - softmax(x)[label])` as an `m×1` column.
    ///
    /// Evaluated as `lse(x without label) - lse(x)`, which stays finite
    /// when the selected probability approaches one.
    pub fn log_complement_softmax(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let (m, k) = self.shape(x);
        if k < 2 || labels.len() != m {
            return Err(Error::Shape(format!(
                "log_complement_softmax: {m}x{k} logits with {} labels",
                labels.len()
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m);
        for (r, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Data(format!("label {y} outside [0, {k})")));
            }
            let row = xv.row(r);
            let rest: Vec<f64> = row
                .iter()
                .enumerate()
                .filter_map(|(j, &v)| (j != y).then_some(v))
                .collect();
            out.push(log_sum_exp(&rest) - log_sum_exp(row));
        }
        let value = Tensor::new(m, 1, out)?;
        let rg = self.needs(x);
        Ok(self.push(
            value,
            Op::LogComplementSoftmax {
                x,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` during
    /// training, evaluation is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.rows(), src.cols(), data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Per-column batch normalization with learnable `gamma`/`beta` (`1×n`).
    ///
    /// Training mode normalizes by batch statistics and folds them into
    /// `stats`; evaluation mode normalizes by `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        training: bool,
    ) -> Result<Var> {
        let m = self.shape(x).0;
        self.batch_norm_anchored(x, gamma, beta, stats, training, m)
    }

    /// Batch normalization whose training-mode statistics come from the
    /// first `stat_rows` rows only; later rows are normalized with those
    /// statistics but do not influence them.
    pub fn batch_norm_anchored(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        training: bool,
        stat_rows: usize,
    ) -> Result<Var> {
        let (m, n) = self.shape(x);
        if stat_rows > m {
            return Err(Error::Shape(format!(
                "batch_norm statistics over {stat_rows} rows of a {m}-row batch"
            )));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != (1, n) {
                return Err(Error::Shape(format!(
                    "batch_norm {name} is {:?}, expected (1, {n})",
                    self.shape(v)
                )));
            }
        }
        if stats.mean.len() != n || stats.var.len() != n {
            return Err(Error::Shape(format!(
                "batch_norm running stats width {} != {n}",
                stats.mean.len()
            )));
        }
        let k = stat_rows;
        if training && k < 2 {
            return Err(Error::Batch(format!(
                "batch_norm in training mode needs at least 2 rows, got {k}"
            )));
        }
        let xv = self.value(x);
        let (mean, var) = if training {
            let mut mean = vec![0.0; n];
            for r in 0..k {
                for (acc, v) in mean.iter_mut().zip(xv.row(r)) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= k as f64);
            let mut var = vec![0.0; n];
            for r in 0..k {
                for ((acc, v), mu) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|v| *v /= k as f64);
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..m {
            for ((v, mu), s) in xhat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - mu) * s;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut value = xhat.clone();
        for r in 0..m {
            for ((v, gv), bv) in value.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        if training {
            let unbiased = k as f64 / (k as f64 - 1.0);
            for j in 0..n {
                stats.mean[j] =
                    (1.0 - BATCH_NORM_MOMENTUM) * stats.mean[j] + BATCH_NORM_MOMENTUM * mean[j];
                stats.var[j] = (1.0 - BATCH_NORM_MOMENTUM) * stats.var[j]
                    + BATCH_NORM_MOMENTUM * var[j] * unbiased;
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stat_rows: training.then_some(k),
            },
            rg,
        ))
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Var {
        let value = self.value(x).clone();
        let rg = self.needs(x);
        self.push(value, Op::GradReverse(x, lambda), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.needs(x);
        Ok(self.push(value, Op::MeanAll(x), rg))
    }

    /// `m×n → m×1` row sums.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let value = Tensor::new(xv.rows(), 1, data).expect("column");
        let rg = self.needs(x);
        self.push(value, Op::SumRows(x), rg)
    }

    /// Rows of `x` picked by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let rows = self.shape(x).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("row index {bad} outside {rows} rows")));
        }
        let value = self.value(x).select_rows(indices);
        let rg = self.needs(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::vstack(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Accumulates d`loss`/d`node` into every node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        // Seeds are kept separate from stored grads so that a second
        // backward pass accumulates rather than double counts.
        let mut pending: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pending);
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, grad: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut pending[v.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                send(*a, g.matmul_t(self.value(*b)));
                send(*b, self.value(*a).t_matmul(g));
            }
            Op::AddBias(x, bias) => {
                send(*x, g.clone());
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                send(*bias, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, elementwise(g, self.value(*b), |x, y| x * y));
                send(*b, elementwise(g, self.value(*a), |x, y| x * y));
            }
            Op::MulCol(x, col) => {
                let c = self.value(*col);
                let xv = self.value(*x);
                let mut gx = g.clone();
                let mut gc = Tensor::zeros(c.rows(), 1);
                for r in 0..g.rows() {
                    let k = c.get(r, 0);
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    gc.set(r, 0, dot);
                }
                send(*x, gx);
                send(*col, gc);
            }
            Op::Scale(x, k) => send(*x, g.map(|v| v * k)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Relu(x) => {
                // Subgradient 0 at the kink.
                send(
                    *x,
                    elementwise(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Sigmoid(x) => {
                send(*x, elementwise(g, &node.value, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                send(*x, elementwise(g, xv, |gv, v| if v > *lo && v < *hi { gv } else { 0.0 }));
            }
            Op::SoftmaxRows(x) => {
                let s = &node.value;
                let mut gx = Tensor::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let dot: f64 = g.row(r).iter().zip(s.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gv), sv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(s.row(r)) {
                        *o = sv * (gv - dot);
                    }
                }
                send(*x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let ls = &node.value;
                let mut gx = Tensor::zeros(ls.rows(), ls.cols());
                for r in 0..ls.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for ((o, gv), lv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(ls.row(r)) {
                        *o = gv - lv.exp() * total;
                    }
                }
                send(*x, gx);
            }
            Op::LogComplementSoftmax { x, labels } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &y) in labels.iter().enumerate() {
                    let gr = g.get(r, 0);
                    let mut full = xv.row(r).to_vec();
                    softmax_in_place(&mut full);
                    let mut rest = xv.row(r).to_vec();
                    rest[y] = f64::NEG_INFINITY;
                    softmax_in_place(&mut rest);
                    for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (rest[j] - full[j]);
                    }
                }
                send(*x, gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                send(*x, Tensor::new(g.rows(), g.cols(), data).expect("mask shape"));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stat_rows,
            } => {
                let (m, n) = g.shape();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..m {
                    for j in 0..n {
                        dgamma[j] += g.get(r, j) * xhat.get(r, j);
                        dbeta[j] += g.get(r, j);
                    }
                }
                let mut gx = Tensor::zeros(m, n);
                for j in 0..n {
                    let scale = gam[j] * inv_std[j];
                    for r in 0..m {
                        // Every output depends on the statistics, but only
                        // the first `k` rows defined them.
                        let v = match *stat_rows {
                            Some(k) if r < k => {
                                let kf = k as f64;
                                scale * (g.get(r, j) - dbeta[j] / kf - xhat.get(r, j) * dgamma[j] / kf)
                            }
                            _ => scale * g.get(r, j),
                        };
                        gx.set(r, j, v);
                    }
                }
                send(*x, gx);
                send(*gamma, Tensor::new(1, n, dgamma).expect("row"));
                send(*beta, Tensor::new(1, n, dbeta).expect("row"));
            }
            Op::GradReverse(x, lambda) => send(*x, g.map(|v| -lambda * v)),
            Op::SumAll(x) => {
                let (r, c) = self.shape(*x);
                send(*x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                send(*x, Tensor::filled(r, c, g.data()[0] / (r * c) as f64));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                let mut gx = Tensor::zeros(r, c);
                for i in 0..r {
                    let v = g.get(i, 0);
                    gx.row_mut(i).iter_mut().for_each(|o| *o = v);
                }
                send(*x, gx);
            }
            Op::GatherRows { x, indices } => {
                let (r, c) = self.shape(*x);
                let mut gx = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                send(*x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let idx: Vec<usize> = (start..start + rows).collect();
                    send(p, g.select_rows(&idx));
                    start += rows;
                }
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
