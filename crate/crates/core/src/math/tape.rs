//! Reverse-accumulation gradient tape over batched matrix operations.
//!
//! Every operation records its output value and parents. [`Tape::backward`]
//! walks the record in reverse, propagating adjoints only through nodes that
//! depend on a parameter leaf. [`Tape::stop_gradient`] copies a value into a
//! fresh constant leaf, so nothing upstream of it receives gradient.

use crate::error::{Error, Result};
use crate::math::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x * w^T + b`, with `b` a 1 x out row broadcast over the batch.
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sqrt(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// n x m tensor times an n x 1 column, broadcast along columns.
    MulColumn(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Min(Var, Var),
    SumCols(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` when nothing reached it.
    pub fn wrt_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor<R> {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    /// A tracked leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked leaf (data, noise, frozen targets).
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() || bv.shape() != (1, wv.rows()) {
            return Err(Error::Shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = xv.matmul_t(wv);
        let bias = bv.data();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_slice_mut(r).iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(R) -> R, op: Op) -> Var {
        let out = self.value(x).map(f);
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(R::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cr = R::from_f64_lossy(c);
        self.unary(x, move |v| v * cr, Op::Scale(x, c))
    }

    /// Elementwise clamp; gradient passes only strictly inside the bounds.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (R::from_f64_lossy(lo), R::from_f64_lossy(hi));
        self.unary(x, move |v| v.max(l).min(h), Op::Clamp { x, lo, hi })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(R, R) -> R, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = av.zip_map(bv, f);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| if y < x { y } else { x }, Op::Min(a, b))
    }

    pub fn mul_column(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.shape() != (xv.rows(), 1) {
            return Err(Error::Shape(format!(
                "mul_column: {:?} by {:?}",
                xv.shape(),
                cv.shape()
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let c = cv.get(r, 0);
            out.row_slice_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        let needs = self.needs(x) || self.needs(col);
        Ok(self.push(out, Op::MulColumn(x, col), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<R>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values.first().map_or(0, |v| v.rows());
        if values.iter().any(|v| v.rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let out = Tensor::concat_cols(&values);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {} columns",
                xv.cols()
            )));
        }
        let out = xv.slice_cols(start, end);
        let needs = self.needs(x);
        Ok(self.push(out, Op::SliceCols { x, start }, needs))
    }

    /// Row sums: n x m -> n x 1.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| xv.row_slice(r).iter().copied().sum())
            .collect();
        let needs = self.needs(x);
        self.push(Tensor::column(data), Op::SumCols(x), needs)
    }

    /// Mean of all entries, as a 1x1 tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let needs = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean(x), needs)
    }

    /// Reverse pass from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(R::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], v: Var, g: Tensor<R>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<R>, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.matmul(wv));
                }
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    g.t_matmul_acc(xv, &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &gv) in db.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let d = g.zip_map(out, |gv, o| if o > R::zero() { gv } else { R::zero() });
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(out, |gv, o| gv * (R::one() - o * o));
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                self.accumulate(grads, *x, g.zip_map(out, |gv, o| gv * o));
            }
            Op::Log(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv / xv);
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv));
                self.accumulate(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let two = R::from_f64_lossy(2.0);
                let d = g.zip_map(out, |gv, o| {
                    if o > R::zero() {
                        gv / (two * o)
                    } else {
                        R::zero()
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let two = R::from_f64_lossy(2.0);
                let d = g.zip_map(self.value(*x), |gv, xv| two * gv * xv);
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gv, av| gv * av));
                }
            }
            Op::Scale(x, c) => {
                let cr = R::from_f64_lossy(*c);
                self.accumulate(grads, *x, g.map(|v| v * cr));
            }
            Op::MulColumn(x, col) => {
                let (xv, cv) = (self.value(*x), self.value(*col));
                if self.needs(*x) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let c = cv.get(r, 0);
                        d.row_slice_mut(r).iter_mut().for_each(|v| *v *= c);
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.needs(*col) {
                    let data = (0..g.rows())
                        .map(|r| {
                            g.row_slice(r)
                                .iter()
                                .zip(xv.row_slice(r))
                                .map(|(&a, &b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *col, Tensor::column(data));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice_cols(start, start + w));
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    d.row_slice_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (R::from_f64_lossy(*lo), R::from_f64_lossy(*hi));
                let d = g.zip_map(self.value(*x), |gv, xv| {
                    if xv > l && xv < h {
                        gv
                    } else {
                        R::zero()
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for ((ga, gb), (&x, &y)) in da
                    .data_mut()
                    .iter_mut()
                    .zip(db.data_mut().iter_mut())
                    .zip(av.data().iter().zip(bv.data()))
                {
                    if y < x {
                        *ga = R::zero();
                    } else {
                        *gb = R::zero();
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let gv = g.get(r, 0);
                    d.row_slice_mut(r).iter_mut().for_each(|v| *v = gv);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = R::from_usize(xv.len().max(1)).unwrap();
                let gv = g.item() / n;
                self.accumulate(grads, *x, Tensor::filled(xv.rows(), xv.cols(), gv));
            }
        }
    }
}

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

pub fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}
