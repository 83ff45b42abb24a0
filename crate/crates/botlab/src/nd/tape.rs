//! Reverse-mode tape. Ops append nodes in execution order, which is already
//! a topological order, so the backward sweep is a single reverse walk.
//!
//! Gradients flow only through `Var`s; `constant` leaves and sparse operator
//! values are treated as fixed.

use std::rc::Rc;

use super::optim::{ParamId, ParamSet};
use super::{Scalar, SpPair, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Param(ParamId),
    Matmul(Var, Var),
    Spmm(Rc<SpPair<F>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a (n x m) + row vector (1 x m), broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, F),
    /// a * s with s a 1x1 variable.
    SMul(Var, Var),
    /// a / s with s a 1x1 variable.
    SDiv(Var, Var),
    LeakyRelu(Var, F),
    Tanh(Var),
    Abs(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    /// Mean negative log-probability of the true class per row.
    SoftmaxCe(Var, Vec<usize>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    spent: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
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

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(op: &'static str, details: String) -> Error {
        Error::ShapeMismatch { op, details }
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: F) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf that reads the parameter's current value; backward accumulates
    /// into the parameter's grad slot.
    pub fn param(&mut self, set: &ParamSet<F>, id: ParamId) -> Var {
        self.push(set.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn spmm(&mut self, m: &Rc<SpPair<F>>, x: Var) -> Result<Var> {
        let v = m.fwd.matmul(self.value(x))?;
        Ok(self.push(v, Op::Spmm(Rc::clone(m), x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut v = ta.clone();
        v.add_assign(tb);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err(
                "sub",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut v = ta.clone();
        v.add_assign_scaled(tb, -F::one());
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Self::shape_err(
                "add_row",
                format!("{:?} + {:?}", ta.shape(), tr.shape()),
            ));
        }
        let mut v = ta.clone();
        for r in 0..v.rows() {
            let cols = v.cols();
            let dst = &mut v.data_mut()[r * cols..(r + 1) * cols];
            for (d, &s) in dst.iter_mut().zip(tr.data()) {
                *d = *d + s;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// y = x * w + b with b broadcast over the rows of x * w.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn smul(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Self::shape_err(
                "smul",
                format!("scalar operand is {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x * sv);
        Ok(self.push(v, Op::SMul(a, s)))
    }

    pub fn sdiv(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Self::shape_err(
                "sdiv",
                format!("scalar operand is {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x / sv);
        Ok(self.push(v, Op::SDiv(a, s)))
    }

    /// Gradient at exactly zero uses the positive branch.
    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let v = self
            .value(a)
            .map(|x| if x >= F::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Self::shape_err("concat_cols", "row counts differ".into()));
            }
            cols += self.value(p).cols();
        }
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            for r in 0..rows {
                for c in 0..t.cols() {
                    v.set(r, at + c, t.get(r, c));
                }
            }
            at += t.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(Self::shape_err("concat_rows", "column counts differ".into()));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let v = Tensor::from_vec(rows, cols, data);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= t.rows() {
                return Err(Self::shape_err(
                    "select_rows",
                    format!("row {} of {}", i, t.rows()),
                ));
            }
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(idx.len(), cols, data);
        Ok(self.push(v, Op::SelectRows(a, idx.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transposed();
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Self::shape_err(
                "reshape",
                format!("{} elements into {}x{}", t.len(), rows, cols),
            ));
        }
        let v = Tensor::from_vec(rows, cols, t.data().to_vec());
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.all_finite() {
            return Err(Error::NonFinite {
                what: "softmax input".into(),
            });
        }
        let v = softmax(t);
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    /// Mean over rows of -log p_true, with probabilities clamped to
    /// [1e-12, 1 - 1e-12] before the log. Backward uses the exact
    /// softmax-cross-entropy gradient (p - onehot) / n.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if !t.all_finite() {
            return Err(Error::NonFinite {
                what: "softmax_ce logits".into(),
            });
        }
        if t.rows() != labels.len() {
            return Err(Self::shape_err(
                "softmax_ce",
                format!("{} rows vs {} labels", t.rows(), labels.len()),
            ));
        }
        let lo = F::from_real(1e-12);
        let hi = F::one() - lo;
        let probs = softmax(t);
        let mut acc = F::zero();
        for (r, &y) in labels.iter().enumerate() {
            if y >= t.cols() {
                return Err(Self::shape_err(
                    "softmax_ce",
                    format!("label {} with {} classes", y, t.cols()),
                ));
            }
            let p = probs.get(r, y).max(lo).min(hi);
            acc = acc - p.ln();
        }
        let n = F::from_real(labels.len() as f64);
        let v = Tensor::scalar(acc / n);
        Ok(self.push(v, Op::SoftmaxCe(logits, labels.to_vec())))
    }

    /// Reverse sweep from `loss` (must be 1x1). Parameter grads are zeroed
    /// first, then every `param` node reachable from the loss accumulates;
    /// unreachable parameters therefore end with zero grad.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
        if self.spent {
            return Err(Error::BackwardTwice);
        }
        self.spent = true;
        let ls = self.value(loss).shape();
        if ls != (1, 1) {
            return Err(Error::NotScalarLoss {
                rows: ls.0,
                cols: ls.1,
            });
        }
        params.zero_grads();

        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(pid) => params.accumulate_grad(*pid, &g),
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transposed())?;
                    let db = self.nodes[a.0].value.transposed().matmul(&g)?;
                    acc(&mut grads, a.0, da);
                    acc(&mut grads, b.0, db);
                }
                Op::Spmm(m, x) => {
                    let dx = m.bwd.matmul(&g)?;
                    acc(&mut grads, x.0, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a.0, g.clone());
                    acc(&mut grads, b.0, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a.0, g.clone());
                    acc(&mut grads, b.0, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = ew_mul(&g, &self.nodes[b.0].value);
                    let db = ew_mul(&g, &self.nodes[a.0].value);
                    acc(&mut grads, a.0, da);
                    acc(&mut grads, b.0, db);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let v = dr.get(0, c) + g.get(r, c);
                            dr.set(0, c, v);
                        }
                    }
                    acc(&mut grads, a.0, g);
                    acc(&mut grads, row.0, dr);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, a.0, g.map(|x| x * c));
                }
                Op::SMul(a, s) => {
                    let sv = self.nodes[s.0].value.item();
                    let da = g.map(|x| x * sv);
                    let ds = dot(&g, &self.nodes[a.0].value);
                    acc(&mut grads, a.0, da);
                    acc(&mut grads, s.0, Tensor::scalar(ds));
                }
                Op::SDiv(a, s) => {
                    let sv = self.nodes[s.0].value.item();
                    let da = g.map(|x| x / sv);
                    let ds = -dot(&g, &self.nodes[a.0].value) / (sv * sv);
                    acc(&mut grads, a.0, da);
                    acc(&mut grads, s.0, Tensor::scalar(ds));
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let x = &self.nodes[a.0].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv >= F::zero() { gv } else { gv * slope })
                        .collect();
                    acc(&mut grads, a.0, Tensor::from_vec(g.rows(), g.cols(), data));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * (F::one() - yv * yv))
                        .collect();
                    acc(&mut grads, a.0, Tensor::from_vec(g.rows(), g.cols(), data));
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| {
                            if xv > F::zero() {
                                gv
                            } else if xv < F::zero() {
                                -gv
                            } else {
                                F::zero()
                            }
                        })
                        .collect();
                    acc(&mut grads, a.0, Tensor::from_vec(g.rows(), g.cols(), data));
                }
                Op::Sum(a) => {
                    let t = &self.nodes[a.0].value;
                    let gv = g.item();
                    acc(&mut grads, a.0, Tensor::full(t.rows(), t.cols(), gv));
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let t = &self.nodes[p.0].value;
                        let mut dp = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            for c in 0..t.cols() {
                                dp.set(r, c, g.get(r, at + c));
                            }
                        }
                        at += t.cols();
                        acc(&mut grads, p.0, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let t = &self.nodes[p.0].value;
                        let mut dp = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            for c in 0..t.cols() {
                                dp.set(r, c, g.get(at + r, c));
                            }
                        }
                        at += t.rows();
                        acc(&mut grads, p.0, dp);
                    }
                }
                Op::SelectRows(a, idx_list) => {
                    let t = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(t.rows(), t.cols());
                    for (out_r, &src_r) in idx_list.iter().enumerate() {
                        for c in 0..t.cols() {
                            let v = da.get(src_r, c) + g.get(out_r, c);
                            da.set(src_r, c, v);
                        }
                    }
                    acc(&mut grads, a.0, da);
                }
                Op::Transpose(a) => {
                    acc(&mut grads, a.0, g.transposed());
                }
                Op::Reshape(a) => {
                    let t = &self.nodes[a.0].value;
                    acc(
                        &mut grads,
                        a.0,
                        Tensor::from_vec(t.rows(), t.cols(), g.data().to_vec()),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mut inner = F::zero();
                        for c in 0..y.cols() {
                            inner = inner + g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                        }
                    }
                    acc(&mut grads, a.0, da);
                }
                Op::SoftmaxCe(logits, labels) => {
                    let t = &self.nodes[logits.0].value;
                    let probs = softmax(t);
                    let n = F::from_real(labels.len() as f64);
                    let gv = g.item();
                    let mut da = Tensor::zeros(t.rows(), t.cols());
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..t.cols() {
                            let p = probs.get(r, c);
                            let tgt = if c == y { F::one() } else { F::zero() };
                            da.set(r, c, gv * (p - tgt) / n);
                        }
                    }
                    acc(&mut grads, logits.0, da);
                }
            }
        }
        Ok(())
    }
}

fn acc<F: Scalar>(grads: &mut [Option<Tensor<F>>], idx: usize, g: Tensor<F>) {
    match &mut grads[idx] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn ew_mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn dot<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> F {
    a.data()
        .iter()
        .zip(b.data())
        .fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Row-wise softmax with max-shift for stability.
fn softmax<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for r in 0..t.rows() {
        let row = t.row(r);
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut denom = F::zero();
        for &v in row {
            denom = denom + (v - m).exp();
        }
        for c in 0..t.cols() {
            out.set(r, c, (t.get(r, c) - m).exp() / denom);
        }
    }
    out
}
