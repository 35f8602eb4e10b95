//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as it is applied (define-by-run), so
//! node indices are already in topological order. Values are computed
//! eagerly; [`Tape::forward`] replays the recorded graph after leaf values
//! have been replaced, and [`Tape::backward`] accumulates `∂root/∂leaf` into
//! every leaf created with `requires_grad`.
//!
//! Gradients accumulate across calls to `backward` until
//! [`Tape::zero_grad`] is called.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    ScaleBy(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Elu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    RowSum(Var),
    ColSum(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    Propagate {
        input: Var,
        arcs: Arc<[(usize, usize)]>,
        rows: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::Elu(..) => "elu",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::LogSumExpRows(..) => "log_sum_exp_rows",
            Op::RowSum(..) => "row_sum",
            Op::ColSum(..) => "col_sum",
            Op::Sum(..) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Propagate { .. } => "propagate",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::AddCol(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::DivCol(a, b)
            | Op::ScaleBy(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Neg(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Elu(a, _)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::LogSumExpRows(a)
            | Op::RowSum(a)
            | Op::ColSum(a)
            | Op::Sum(a)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Propagate { input, .. } => vec![*input],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn row_broadcast(op: &'static str, a: &Tensor, r: &Tensor) -> Result<()> {
    if r.rows() != 1 || r.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: r.shape(),
        });
    }
    Ok(())
}

fn col_broadcast(op: &'static str, a: &Tensor, c: &Tensor) -> Result<()> {
    if c.cols() != 1 || c.rows() != a.rows() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: c.shape(),
        });
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn stable_log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Replace the value of a leaf; call [`Tape::forward`] afterwards to
    /// refresh dependent nodes.
    pub fn set_value(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid("set_value on a non-leaf node"));
        }
        same_shape("set_value", &node.value, &value)?;
        node.value = value;
        Ok(())
    }

    /// Recompute every node up to `root` from the current leaf values and
    /// return the value at `root`.
    pub fn forward(&mut self, root: Var) -> Result<Tensor> {
        for i in 0..=root.0 {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(&op)?;
            self.nodes[i].value = value;
        }
        Ok(self.nodes[root.0].value.clone())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => val(a).matmul(val(b))?,
            Op::Transpose(a) => val(a).transpose(),
            Op::Add(a, b) => {
                same_shape("add", val(a), val(b))?;
                val(a).zip_map(val(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same_shape("sub", val(a), val(b))?;
                val(a).zip_map(val(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same_shape("mul", val(a), val(b))?;
                val(a).zip_map(val(b), |x, y| x * y)
            }
            Op::Div(a, b) => {
                same_shape("div", val(a), val(b))?;
                val(a).zip_map(val(b), |x, y| x / y)
            }
            Op::AddRow(a, r) | Op::MulRow(a, r) => {
                let (a, r) = (val(a), val(r));
                row_broadcast(op.name(), a, r)?;
                let add = matches!(op, Op::AddRow(..));
                let mut out = a.clone();
                for i in 0..out.rows() {
                    for (o, &rv) in out.row_mut(i).iter_mut().zip(r.data()) {
                        if add {
                            *o += rv;
                        } else {
                            *o *= rv;
                        }
                    }
                }
                out
            }
            Op::AddCol(a, c) | Op::MulCol(a, c) | Op::DivCol(a, c) => {
                let (a, c) = (val(a), val(c));
                col_broadcast(op.name(), a, c)?;
                let mut out = a.clone();
                for i in 0..out.rows() {
                    let cv = c.data()[i];
                    for o in out.row_mut(i) {
                        match op {
                            Op::AddCol(..) => *o += cv,
                            Op::MulCol(..) => *o *= cv,
                            _ => *o /= cv,
                        }
                    }
                }
                out
            }
            Op::Scale(a, s) => val(a).scale(*s),
            Op::AddScalar(a, s) => val(a).map(|x| x + s),
            Op::ScaleBy(a, s) => {
                let s = val(s);
                if s.shape() != (1, 1) {
                    return Err(Error::ShapeMismatch {
                        op: "scale_by",
                        left: val(a).shape(),
                        right: s.shape(),
                    });
                }
                val(a).scale(s.item())
            }
            Op::Neg(a) => val(a).map(|x| -x),
            Op::Exp(a) => val(a).map(f64::exp),
            Op::Log(a) => val(a).map(f64::ln),
            Op::Relu(a) => val(a).map(|x| x.max(0.0)),
            Op::Elu(a, alpha) => val(a).map(|x| if x > 0.0 { x } else { alpha * x.exp_m1() }),
            Op::Sigmoid(a) => val(a).map(sigmoid),
            Op::LogSigmoid(a) => val(a).map(stable_log_sigmoid),
            Op::SoftmaxRows(a) => val(a).softmax_rows(),
            Op::LogSoftmaxRows(a) => {
                let mut out = val(a).clone();
                for i in 0..out.rows() {
                    let row = out.row_mut(i);
                    let lse = log_sum_exp(row);
                    for x in row {
                        *x -= lse;
                    }
                }
                out
            }
            Op::LogSumExpRows(a) => {
                let x = val(a);
                Tensor::column((0..x.rows()).map(|i| log_sum_exp(x.row(i))).collect())
            }
            Op::RowSum(a) => val(a).row_sums(),
            Op::ColSum(a) => val(a).col_sums(),
            Op::Sum(a) => Tensor::scalar(val(a).sum()),
            Op::ConcatCols(vs) => {
                let rows = val(&vs[0]).rows();
                let mut cols = 0;
                for v in vs {
                    if val(v).rows() != rows {
                        return Err(Error::ShapeMismatch {
                            op: "concat_cols",
                            left: val(&vs[0]).shape(),
                            right: val(v).shape(),
                        });
                    }
                    cols += val(v).cols();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for v in vs {
                        data.extend_from_slice(val(v).row(i));
                    }
                }
                Tensor::from_vec(rows, cols, data)?
            }
            Op::GatherRows(a, idx) => val(a).gather_rows(idx)?,
            Op::Propagate { input, arcs, rows } => {
                let x = val(input);
                let mut out = Tensor::zeros(*rows, x.cols());
                for &(u, v) in arcs.iter() {
                    if u >= *rows || v >= x.rows() {
                        return Err(Error::NodeOutOfRange {
                            index: u.max(v),
                            n: (*rows).min(x.rows()),
                        });
                    }
                    let src = x.row(v);
                    for (o, s) in out.row_mut(u).iter_mut().zip(src) {
                        *o += s;
                    }
                }
                out
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        Ok(out)
    }

    /// Accumulate `∂root/∂leaf` into every gradient-carrying leaf.
    /// Leaves that `root` does not depend on receive zeros.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.nodes[root.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                accumulate(&mut self.nodes[i].grad, g);
                continue;
            }
            let contributions = self.local_grads(i, &g)?;
            for (v, gv) in contributions {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], gv);
                }
            }
        }

        for node in &mut self.nodes[..=root.0] {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                let (r, c) = node.value.shape();
                node.grad = Some(Tensor::zeros(r, c));
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    out.push((*a, g.matmul_nt(val(b))?));
                }
                if needs(b) {
                    out.push((*b, val(a).matmul_tn(g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    out.push((*a, g.zip_map(val(b), |x, y| x * y)));
                }
                if needs(b) {
                    out.push((*b, g.zip_map(val(a), |x, y| x * y)));
                }
            }
            Op::Div(a, b) => {
                if needs(a) {
                    out.push((*a, g.zip_map(val(b), |x, y| x / y)));
                }
                if needs(b) {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let gy = g.zip_map(y, |x, yv| x * yv);
                    out.push((*b, gy.zip_map(val(b), |x, bv| -x / bv)));
                }
            }
            Op::AddRow(a, r) => {
                out.push((*a, g.clone()));
                if needs(r) {
                    out.push((*r, g.col_sums()));
                }
            }
            Op::AddCol(a, c) => {
                out.push((*a, g.clone()));
                if needs(c) {
                    out.push((*c, g.row_sums()));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (val(a), val(r));
                if needs(a) {
                    let mut ga = g.clone();
                    for k in 0..ga.rows() {
                        for (x, s) in ga.row_mut(k).iter_mut().zip(rv.data()) {
                            *x *= s;
                        }
                    }
                    out.push((*a, ga));
                }
                if needs(r) {
                    out.push((*r, g.zip_map(av, |x, y| x * y).col_sums()));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (val(a), val(c));
                if needs(a) {
                    let mut ga = g.clone();
                    for k in 0..ga.rows() {
                        let s = cv.data()[k];
                        ga.row_mut(k).iter_mut().for_each(|x| *x *= s);
                    }
                    out.push((*a, ga));
                }
                if needs(c) {
                    out.push((*c, g.zip_map(av, |x, y| x * y).row_sums()));
                }
            }
            Op::DivCol(a, c) => {
                let cv = val(c);
                if needs(a) {
                    let mut ga = g.clone();
                    for k in 0..ga.rows() {
                        let s = cv.data()[k];
                        ga.row_mut(k).iter_mut().for_each(|x| *x /= s);
                    }
                    out.push((*a, ga));
                }
                if needs(c) {
                    // d(a_kj / c_k)/dc_k = -y_kj / c_k
                    let mut gc = g.zip_map(y, |x, yv| x * yv).row_sums();
                    for (k, x) in gc.data_mut().iter_mut().enumerate() {
                        *x = -*x / cv.data()[k];
                    }
                    out.push((*c, gc));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.scale(*s))),
            Op::AddScalar(a, _) => out.push((*a, g.clone())),
            Op::ScaleBy(a, s) => {
                if needs(a) {
                    out.push((*a, g.scale(val(s).item())));
                }
                if needs(s) {
                    let gs = g.zip_map(val(a), |x, y| x * y).sum();
                    out.push((*s, Tensor::scalar(gs)));
                }
            }
            Op::Neg(a) => out.push((*a, g.map(|x| -x))),
            Op::Exp(a) => out.push((*a, g.zip_map(y, |x, yv| x * yv))),
            Op::Log(a) => out.push((*a, g.zip_map(val(a), |x, av| x / av))),
            Op::Relu(a) => out.push((
                *a,
                g.zip_map(val(a), |x, av| if av > 0.0 { x } else { 0.0 }),
            )),
            Op::Elu(a, alpha) => {
                let av = val(a);
                let mut ga = g.clone();
                for ((x, &ai), &yi) in ga.data_mut().iter_mut().zip(av.data()).zip(y.data()) {
                    if ai <= 0.0 {
                        *x *= yi + alpha;
                    }
                }
                out.push((*a, ga));
            }
            Op::Sigmoid(a) => out.push((*a, g.zip_map(y, |x, s| x * s * (1.0 - s)))),
            Op::LogSigmoid(a) => out.push((*a, g.zip_map(val(a), |x, av| x * sigmoid(-av)))),
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for k in 0..ga.rows() {
                    let yr = y.row(k);
                    let inner: f64 = g.row(k).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (x, &yv) in ga.row_mut(k).iter_mut().zip(yr) {
                        *x = yv * (*x - inner);
                    }
                }
                out.push((*a, ga));
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for k in 0..ga.rows() {
                    let total: f64 = g.row(k).iter().sum();
                    for (x, &yv) in ga.row_mut(k).iter_mut().zip(y.row(k)) {
                        *x -= yv.exp() * total;
                    }
                }
                out.push((*a, ga));
            }
            Op::LogSumExpRows(a) => {
                let mut ga = val(a).clone();
                for k in 0..ga.rows() {
                    let (gk, yk) = (g.data()[k], y.data()[k]);
                    for x in ga.row_mut(k) {
                        *x = if yk == f64::NEG_INFINITY {
                            0.0
                        } else {
                            gk * (*x - yk).exp()
                        };
                    }
                }
                out.push((*a, ga));
            }
            Op::RowSum(a) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for k in 0..r {
                    let s = g.data()[k];
                    ga.row_mut(k).iter_mut().for_each(|x| *x = s);
                }
                out.push((*a, ga));
            }
            Op::ColSum(a) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for k in 0..r {
                    ga.row_mut(k).copy_from_slice(g.data());
                }
                out.push((*a, ga));
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                out.push((*a, Tensor::filled(r, c, g.item())));
            }
            Op::ConcatCols(vs) => {
                let mut offset = 0;
                for v in vs {
                    let (r, c) = val(v).shape();
                    if needs(v) {
                        let mut gv = Tensor::zeros(r, c);
                        for k in 0..r {
                            gv.row_mut(k).copy_from_slice(&g.row(k)[offset..offset + c]);
                        }
                        out.push((*v, gv));
                    }
                    offset += c;
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (x, gv) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                        *x += gv;
                    }
                }
                out.push((*a, ga));
            }
            Op::Propagate { input, arcs, .. } => {
                let (r, c) = val(input).shape();
                let mut ga = Tensor::zeros(r, c);
                for &(u, v) in arcs.iter() {
                    for (x, gv) in ga.row_mut(v).iter_mut().zip(g.row(u)) {
                        *x += gv;
                    }
                }
                out.push((*input, ga));
            }
        }
        Ok(out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    /// `a + r` with the `1 x c` row vector `r` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.push(Op::AddRow(a, r))
    }

    /// `a + c` with the `r x 1` column vector `c` broadcast over columns.
    pub fn add_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.push(Op::AddCol(a, c))
    }

    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.push(Op::MulRow(a, r))
    }

    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.push(Op::MulCol(a, c))
    }

    /// Row `k` of `a` divided by `c[k]`.
    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.push(Op::DivCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, s))
    }

    /// `s · a` for a `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        self.push(Op::ScaleBy(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.push(Op::Elu(a, alpha))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSoftmaxRows(a))
    }

    /// `log Σ_j exp(a_ij)` per row, `N x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSumExpRows(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowSum(a))
    }

    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::ColSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        self.push(Op::GatherRows(a, indices))
    }

    /// Sparse aggregation: output row `u` is the sum of input rows `v` over
    /// all arcs `(u, v)`. The output has `rows` rows.
    pub fn propagate(
        &mut self,
        input: Var,
        arcs: Arc<[(usize, usize)]>,
        rows: usize,
    ) -> Result<Var> {
        self.push(Op::Propagate { input, arcs, rows })
    }
}
