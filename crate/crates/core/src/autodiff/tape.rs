//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles in
//! execution order, so node indices are already a topological order. The
//! tape is rebuilt for each training step and dropped afterwards.

use super::tensor::{matmul_at_kernel, matmul_bt_kernel, matmul_kernel, Tensor};
use super::{normal_cdf, sigmoid};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an operand of a binary op maps onto the output shape.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Same,
    /// Operand is `[n]` or `[1, n]`, repeated over rows.
    Row,
    /// Operand is `[m, 1]`, repeated over columns.
    Col,
    Scalar,
}

impl Bcast {
    /// Offset of row `r` and whether the operand varies along columns.
    #[inline]
    fn row(self, r: usize, cols: usize) -> (usize, bool) {
        match self {
            Bcast::Same => (r * cols, true),
            Bcast::Row => (0, true),
            Bcast::Col => (r, false),
            Bcast::Scalar => (0, false),
        }
    }
}

#[inline]
fn bin_apply(kind: BinKind, x: f64, y: f64) -> f64 {
    match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
        BinKind::Div => x / y,
    }
}

#[inline]
fn bin_grads(kind: BinKind, g: f64, x: f64, y: f64) -> (f64, f64) {
    match kind {
        BinKind::Add => (g, g),
        BinKind::Sub => (g, -g),
        BinKind::Mul => (g * y, g * x),
        BinKind::Div => (g / y, -g * x / (y * y)),
    }
}

fn elementwise_grad(x: &Tensor, y: &Tensor, g: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("elementwise shape")
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinKind, Var, Bcast, Var, Bcast),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Tanh(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    NormalCdf(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    SegmentMean(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape holding values and the recorded graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn broadcast_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, Bcast, Bcast)> {
    fn relative(small: &Tensor, big: &Tensor) -> Option<Bcast> {
        if small.shape() == big.shape() {
            return Some(Bcast::Same);
        }
        if small.len() == 1 {
            return Some(Bcast::Scalar);
        }
        let (bs, ss) = (big.shape(), small.shape());
        if bs.len() == 2 {
            let row_like = (ss.len() == 1 && ss[0] == bs[1]) || (ss.len() == 2 && ss[0] == 1 && ss[1] == bs[1]);
            if row_like {
                return Some(Bcast::Row);
            }
            if ss.len() == 2 && ss[1] == 1 && ss[0] == bs[0] {
                return Some(Bcast::Col);
            }
        }
        None
    }
    if a.len() >= b.len() {
        if let Some(bb) = relative(b, a) {
            return Ok((a.shape().to_vec(), Bcast::Same, bb));
        }
    } else if let Some(ab) = relative(a, b) {
        return Ok((b.shape().to_vec(), ab, Bcast::Same));
    }
    Err(Error::shape(op, a.shape(), b.shape()))
}

fn log_sigmoid(x: f64) -> f64 {
    // log(sigmoid(x)) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_kernel(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn binary(&mut self, kind: BinKind, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, ba, bb) = broadcast_pair(name, ta, tb)?;
        let n: usize = shape.iter().product();
        let cols = shape.last().copied().unwrap_or(1).max(1);
        let (da, db) = (ta.data(), tb.data());
        let mut data = Vec::with_capacity(n);
        for r in 0..n / cols {
            let ((oa, va), (ob, vb)) = (ba.row(r, cols), bb.row(r, cols));
            match (va, vb) {
                (true, true) => {
                    let (xa, xb) = (&da[oa..oa + cols], &db[ob..ob + cols]);
                    data.extend(xa.iter().zip(xb).map(|(&x, &y)| bin_apply(kind, x, y)));
                }
                (true, false) => {
                    let y = db[ob];
                    data.extend(da[oa..oa + cols].iter().map(|&x| bin_apply(kind, x, y)));
                }
                (false, true) => {
                    let x = da[oa];
                    data.extend(db[ob..ob + cols].iter().map(|&y| bin_apply(kind, x, y)));
                }
                (false, false) => data.extend(std::iter::repeat_n(bin_apply(kind, da[oa], db[ob]), cols)),
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Binary(kind, a, ba, b, bb)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, "div", a, b)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { LEAKY_SLOPE * x }, Op::LeakyRelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Standard normal CDF.
    pub fn normal_cdf(&mut self, a: Var) -> Var {
        self.unary(a, normal_cdf, Op::NormalCdf(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row sums over the last dimension: `[m, n] -> [m, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let rows = t.rows();
        let data: Vec<f64> = (0..rows).map(|i| t.row(i).iter().sum()).collect();
        self.push(Tensor::new(vec![rows, 1], data).expect("row sums"), Op::SumLast(a))
    }

    /// Concatenation along the last dimension of equally-rowed matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::shape("concat", self.value(*first).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::shape("slice", t.shape(), &[start, end]));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(out, Op::Slice(a, start, end)))
    }

    /// Mean over consecutive row groups: rows are split into segments of the
    /// given sizes and each segment is averaged column-wise.
    ///
    /// Every column is summed in sorted order, so the result is bitwise
    /// invariant to any permutation of rows within a segment.
    pub fn segment_mean(&mut self, a: Var, sizes: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let total: usize = sizes.iter().sum();
        if total != t.rows() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::shape("segment_mean", t.shape(), sizes));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(sizes.len() * cols);
        let mut start = 0;
        let mut column = Vec::new();
        for &size in sizes {
            for c in 0..cols {
                column.clear();
                column.extend((start..start + size).map(|r| t.data()[r * cols + c]));
                column.sort_by(f64::total_cmp);
                data.push(column.iter().sum::<f64>() / size as f64);
            }
            start += size;
        }
        let out = Tensor::new(vec![sizes.len(), cols], data)?;
        Ok(self.push(out, Op::SegmentMean(a, sizes.to_vec())))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            }
        }
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let da = matmul_bt_kernel(g.data(), tb.data(), m, k, n);
                let db = matmul_at_kernel(ta.data(), g.data(), m, k, n);
                acc(grads, *a, Tensor::new(vec![m, k], da).expect("matmul grad"));
                acc(grads, *b, Tensor::new(vec![k, n], db).expect("matmul grad"));
            }
            Op::Binary(kind, a, ba, b, bb) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let cols = out.cols().max(1);
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                let (xa, xb) = (ta.data(), tb.data());
                for (r, grow) in g.data().chunks(cols).enumerate() {
                    let ((oa, va), (ob, vb)) = (ba.row(r, cols), bb.row(r, cols));
                    for (c, &gj) in grow.iter().enumerate() {
                        let ia = if va { oa + c } else { oa };
                        let ib = if vb { ob + c } else { ob };
                        let (ga, gb) = bin_grads(*kind, gj, xa[ia], xb[ib]);
                        da[ia] += ga;
                        db[ib] += gb;
                    }
                }
                acc(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("shape"));
                acc(grads, *b, Tensor::new(tb.shape().to_vec(), db).expect("shape"));
            }
            Op::Neg(a) => acc(grads, *a, g.map(|x| -x)),
            Op::Scale(a, c) => acc(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Exp(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |_, y, gv| gv * y)),
            Op::Log(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |x, _, gv| gv / x)),
            Op::Sqrt(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |_, y, gv| gv * 0.5 / y)),
            Op::Tanh(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |_, y, gv| gv * (1.0 - y * y))),
            Op::LeakyRelu(a) => acc(
                grads,
                *a,
                elementwise_grad(self.value(*a), out, g, |x, _, gv| if x > 0.0 { gv } else { LEAKY_SLOPE * gv }),
            ),
            Op::Sigmoid(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |_, y, gv| gv * y * (1.0 - y))),
            Op::LogSigmoid(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |x, _, gv| gv * sigmoid(-x))),
            Op::NormalCdf(a) => acc(grads, *a, elementwise_grad(self.value(*a), out, g, |x, _, gv| gv * normal_pdf(x))),
            Op::Clamp(a, lo, hi) => acc(
                grads,
                *a,
                elementwise_grad(self.value(*a), out, g, |x, _, gv| if x > *lo && x < *hi { gv } else { 0.0 }),
            ),
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut d = vec![0.0; out.len()];
                for ((dr, yr), gr) in d
                    .chunks_mut(cols)
                    .zip(out.data().chunks(cols))
                    .zip(g.data().chunks(cols))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((dv, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = y * (gv - dot);
                    }
                }
                acc(grads, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Sum(a) => acc(grads, *a, Tensor::full(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(grads, *a, Tensor::full(self.shape(*a), g.item() / n))
            }
            Op::SumLast(a) => {
                let x = self.value(*a);
                let cols = x.cols();
                let data = (0..x.len()).map(|j| g.data()[j / cols]).collect();
                acc(grads, *a, Tensor::new(x.shape().to_vec(), data).expect("shape"));
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let x = self.value(*p);
                    let c = x.cols();
                    let mut data = Vec::with_capacity(x.len());
                    for r in 0..x.rows() {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    acc(grads, *p, Tensor::new(x.shape().to_vec(), data).expect("shape"));
                    offset += c;
                }
            }
            Op::Slice(a, start, end) => {
                let x = self.value(*a);
                let (cols, w) = (x.cols(), end - start);
                let mut data = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    data[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(grads, *a, Tensor::new(x.shape().to_vec(), data).expect("shape"));
            }
            Op::SegmentMean(a, sizes) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut data = Vec::with_capacity(x.len());
                for (s, &size) in sizes.iter().enumerate() {
                    let grow = &g.data()[s * cols..(s + 1) * cols];
                    for _ in 0..size {
                        data.extend(grow.iter().map(|v| v / size as f64));
                    }
                }
                acc(grads, *a, Tensor::new(x.shape().to_vec(), data).expect("shape"));
            }
        }
    }
}
