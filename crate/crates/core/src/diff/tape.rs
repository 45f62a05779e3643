//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its output value and the references it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in exact
//! reverse order of recording, so gradients are bitwise reproducible for a
//! given tape.

use rand::Rng;

use super::special::{digamma_unchecked, ln_gamma_unchecked, sigmoid, softplus, trigamma_unchecked};
use super::tensor::{matmul_grad_lhs, matmul_grad_rhs, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise functions with a recorded derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    /// Natural log; strictly positive inputs only.
    Log,
    Softplus,
    /// ln Γ(x), x > 0. Derivative is ψ(x).
    LnGamma,
    /// ψ(x), x > 0. Derivative is ψ₁(x).
    Digamma,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
            Unary::LnGamma => "ln_gamma",
            Unary::Digamma => "digamma",
        }
    }

    fn requires_positive(self) -> bool {
        matches!(self, Unary::Log | Unary::LnGamma | Unary::Digamma)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::LnGamma => ln_gamma_unchecked(x),
            Unary::Digamma => digamma_unchecked(x),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::LnGamma => digamma_unchecked(x),
            Unary::Digamma => trigamma_unchecked(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Affine(Var, f64),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    SoftmaxRows(Var),
    Concat(Vec<Var>, usize),
    Transpose(Var),
    Clamp(Var, f64, f64),
    MaskMul(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// depend on any parameter.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Single-threaded record of differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

#[inline]
fn bidx(i: usize, j: usize, dims: (usize, usize)) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
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

    /// Allows another backward pass over the same recorded tape.
    pub fn reset(&mut self) {
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("{name} produced a non-finite value")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0]
            .value
            .dims2()
            .ok_or_else(|| Error::Shape("tape ops support rank ≤ 2".into()))
    }

    /// Records a differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul {m}×{k} by {k2}×{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg, "matmul")
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let da = self.dims(a)?;
        let db = self.dims(b)?;
        let out_dims = broadcast_dims(da, db).ok_or_else(|| {
            Error::Shape(format!("cannot broadcast {da:?} with {db:?}"))
        })?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        if kind == Binary::Div && vb.iter().any(|&x| x == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (shape, data) = if da == db {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            (self.value(a).shape().to_vec(), data)
        } else {
            let mut data = Vec::with_capacity(out_dims.0 * out_dims.1);
            for i in 0..out_dims.0 {
                for j in 0..out_dims.1 {
                    data.push(f(va[bidx(i, j, da)], vb[bidx(i, j, db)]));
                }
            }
            (vec![out_dims.0, out_dims.1], data)
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Tensor::from_parts(shape, data), Op::Binary(kind, a, b), rg, "binary op")
    }

    /// Elementwise sum; either side may be a row, column or 1×1 broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| scale * x + shift)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, data), Op::Affine(a, scale), rg, "affine")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn unary(&mut self, f: Unary, a: Var) -> Result<Var> {
        let input = self.value(a).data();
        if f.requires_positive() {
            if let Some(&bad) = input.iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain(format!(
                    "{} requires positive input, got {bad}",
                    f.name()
                )));
            }
        }
        let data = input.iter().map(|&x| f.apply(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, data), Op::Unary(f, a), rg, f.name())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn ln_gamma(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::LnGamma, a)
    }

    pub fn digamma(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Digamma, a)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(vec![], vec![s]), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::EmptyInput("mean of empty tensor".into()));
        }
        let s = self.value(a).sum() / n as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(vec![], vec![s]), Op::Mean(a), rg, "mean")
    }

    /// Sum along `axis`: 0 collapses rows into a `1×c` row, 1 collapses
    /// columns into an `r×1` column.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let v = self.value(a).data();
        let (shape, data) = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, &x) in out.iter_mut().zip(&v[i * c..(i + 1) * c]) {
                        *o += x;
                    }
                }
                (vec![1, c], out)
            }
            1 => (
                vec![r, 1],
                (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect(),
            ),
            _ => return Err(Error::Shape(format!("sum_axis: invalid axis {axis}"))),
        };
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, data), Op::SumAxis(a, axis), rg, "sum_axis")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let v = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, out), Op::SoftmaxRows(a), rg, "softmax")
    }

    /// Concatenates along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of nothing".into()));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims(p)).collect::<Result<_>>()?;
        let (shape, data) = match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::Shape("concat rows: column counts differ".into()));
                }
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                (vec![rows, c], data)
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::Shape("concat cols: row counts differ".into()));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for (&p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(p).data()[i * d.1..(i + 1) * d.1]);
                    }
                }
                (vec![r, cols], data)
            }
            _ => return Err(Error::Shape(format!("concat: invalid axis {axis}"))),
        };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.to_vec(), axis),
            rg,
            "concat",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let v = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg, "transpose")
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is passed through
    /// inside the interval (boundaries included) and zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Domain(format!("clamp bounds {lo} > {hi}")));
        }
        let data = self.value(a).data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, data), Op::Clamp(a, lo, hi), rg, "clamp")
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        self.clamp(a, lo, f64::MAX)
    }

    /// Multiplies by a fixed mask of the same shape (no gradient to the mask).
    pub fn mask_mul(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        if mask.shape() != self.value(a).shape() {
            return Err(Error::Shape(format!(
                "mask {:?} vs value {:?}",
                mask.shape(),
                self.value(a).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires_grad(a);
        self.push(Tensor::from_parts(shape, data), Op::MaskMul(a, mask), rg, "mask_mul")
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 − rate)`. A zero rate records nothing and
    /// draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let shape = self.value(a).shape().to_vec();
        let mask = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask_mul(a, Tensor::from_parts(shape, mask))
    }

    /// Reverse pass from a scalar `loss`. Fails if a pass already ran since
    /// the last [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::State(
                "backward already called on this tape; call reset() first".into(),
            ));
        }
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State("backward needs a scalar recorded on this tape".into()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = va.rc();
                let n = vb.rc().1;
                if self.requires_grad(*a) {
                    let slot = grad_slot(grads, *a, va.shape());
                    matmul_grad_lhs(gd, vb.data(), slot, m, k, n);
                }
                if self.requires_grad(*b) {
                    let slot = grad_slot(grads, *b, vb.shape());
                    matmul_grad_rhs(va.data(), gd, slot, m, k, n);
                }
            }
            Op::Binary(kind, a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (da, db) = (va.rc(), vb.rc());
                let out = node.value.rc();
                let (xa, xb) = (va.data(), vb.data());
                if self.requires_grad(*a) {
                    let slot = grad_slot(grads, *a, va.shape());
                    for i in 0..out.0 {
                        for j in 0..out.1 {
                            let go = gd[i * out.1 + j];
                            let ia = bidx(i, j, da);
                            let ib = bidx(i, j, db);
                            slot[ia] += match kind {
                                Binary::Add | Binary::Sub => go,
                                Binary::Mul => go * xb[ib],
                                Binary::Div => go / xb[ib],
                            };
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let slot = grad_slot(grads, *b, vb.shape());
                    for i in 0..out.0 {
                        for j in 0..out.1 {
                            let go = gd[i * out.1 + j];
                            let ia = bidx(i, j, da);
                            let ib = bidx(i, j, db);
                            slot[ib] += match kind {
                                Binary::Add => go,
                                Binary::Sub => -go,
                                Binary::Mul => go * xa[ia],
                                Binary::Div => -go * xa[ia] / (xb[ib] * xb[ib]),
                            };
                        }
                    }
                }
            }
            Op::Affine(a, s) => {
                let shape = self.nodes[a.0].value.shape();
                let slot = grad_slot(grads, *a, shape);
                for (d, &go) in slot.iter_mut().zip(gd) {
                    *d += s * go;
                }
            }
            Op::Unary(f, a) => {
                let x = self.nodes[a.0].value.data();
                let y = node.value.data();
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for i in 0..slot.len() {
                    slot[i] += gd[i] * f.derivative(x[i], y[i]);
                }
            }
            Op::Sum(a) => {
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                slot.iter_mut().for_each(|d| *d += gd[0]);
            }
            Op::Mean(a) => {
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                let scale = gd[0] / slot.len() as f64;
                slot.iter_mut().for_each(|d| *d += scale);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.nodes[a.0].value.rc();
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for i in 0..r {
                    for j in 0..c {
                        slot[i * c + j] += if *axis == 0 { gd[j] } else { gd[i] };
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = node.value.rc();
                let y = node.value.data();
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &gd[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        slot[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let out_cols = node.value.rc().1;
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.nodes[p.0].value.rc();
                    if self.requires_grad(*p) {
                        let slot = grad_slot(grads, *p, self.nodes[p.0].value.shape());
                        for i in 0..pr {
                            for j in 0..pc {
                                let src = if *axis == 0 {
                                    (offset + i) * out_cols + j
                                } else {
                                    i * out_cols + offset + j
                                };
                                slot[i * pc + j] += gd[src];
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.rc();
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for i in 0..r {
                    for j in 0..c {
                        slot[i * c + j] += gd[j * r + i];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.nodes[a.0].value.data();
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for i in 0..slot.len() {
                    if x[i] >= *lo && x[i] <= *hi {
                        slot[i] += gd[i];
                    }
                }
            }
            Op::MaskMul(a, mask) => {
                let slot = grad_slot(grads, *a, self.nodes[a.0].value.shape());
                for ((d, &go), &m) in slot.iter_mut().zip(gd).zip(mask.data()) {
                    *d += go * m;
                }
            }
        }
    }
}
