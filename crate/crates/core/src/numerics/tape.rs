//! Linear Wengert tape for reverse-mode differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends one node to the
//! tape. Node ids are assigned in creation order, so inputs always precede
//! their consumers and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{matmul_kernel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Reshape(usize),
    Transpose(usize),
    MatMul(usize, usize),
    SoftmaxRows(usize, f64),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf: gradients are accumulated for it.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`; afterwards every trainable leaf
    /// reachable from `loss` holds `d loss / d leaf` (see [`Var::grad`]).
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let loss_value = self.value(loss.id);
        if !loss_value.is_scalar() || loss_value.ndim() > 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", loss_value.shape())));
        }
        let mut nodes = self.nodes.borrow_mut();
        for n in nodes.iter_mut() {
            n.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            let y = Rc::clone(&nodes[id].value);
            let op = nodes[id].op.clone();
            match &op {
                Op::Leaf => {
                    let shape = y.shape().to_vec();
                    nodes[id].grad = Some(Tensor::new(shape, g)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *a, || g.clone());
                    accumulate(&mut grads, &nodes, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &nodes, *a, || g.clone());
                    accumulate(&mut grads, &nodes, *b, || g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    accumulate(&mut grads, &nodes, *a, || g.iter().zip(bv.data()).map(|(g, b)| g * b).collect());
                    accumulate(&mut grads, &nodes, *b, || g.iter().zip(av.data()).map(|(g, a)| g * a).collect());
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, &nodes, *a, || g.iter().map(|v| v * s).collect());
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    accumulate(&mut grads, &nodes, *a, || g.clone());
                }
                Op::Sqrt(a) => {
                    accumulate(&mut grads, &nodes, *a, || g.iter().zip(y.data()).map(|(g, y)| 0.5 * g / y).collect());
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, &nodes, *a, || g.iter().zip(y.data()).map(|(g, y)| g * y).collect());
                }
                Op::Log(a) => {
                    let av = &nodes[*a].value;
                    accumulate(&mut grads, &nodes, *a, || g.iter().zip(av.data()).map(|(g, x)| g / x).collect());
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, &nodes, *a, || {
                        g.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect()
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = y.dims2()?;
                    accumulate(&mut grads, &nodes, *a, || transpose_raw(&g, r, c));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k) = av.dims2()?;
                    let n = bv.shape()[1];
                    accumulate(&mut grads, &nodes, *a, || matmul_kernel(&g, &transpose_raw(bv.data(), k, n), m, n, k));
                    accumulate(&mut grads, &nodes, *b, || matmul_kernel(&transpose_raw(av.data(), m, k), &g, k, m, n));
                }
                Op::SoftmaxRows(a, scale) => {
                    let (r, c) = y.dims2()?;
                    accumulate(&mut grads, &nodes, *a, || {
                        let mut out = vec![0.0; r * c];
                        for i in 0..r {
                            let yr = &y.data()[i * c..(i + 1) * c];
                            let gr = &g[i * c..(i + 1) * c];
                            let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                            for j in 0..c {
                                out[i * c + j] = scale * yr[j] * (gr[j] - dot);
                            }
                        }
                        out
                    });
                }
                Op::Sum(a) => {
                    let n = nodes[*a].value.len();
                    accumulate(&mut grads, &nodes, *a, || vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len();
                    accumulate(&mut grads, &nodes, *a, || vec![g[0] / n as f64; n]);
                }
                Op::Concat(parts, axis) => {
                    let gt = Tensor::new(y.shape().to_vec(), g)?;
                    let sizes: Vec<usize> = parts.iter().map(|p| nodes[*p].value.shape()[*axis]).collect();
                    let pieces = gt.split(*axis, &sizes)?;
                    for (p, piece) in parts.iter().zip(pieces) {
                        accumulate(&mut grads, &nodes, *p, || piece.into_data());
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = nodes[*input].value.shape().to_vec();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let len = y.shape()[*axis];
                    let block = in_shape[*axis] * inner;
                    accumulate(&mut grads, &nodes, *input, || {
                        let mut out = vec![0.0; in_shape.iter().product()];
                        for o in 0..outer {
                            let dst = o * block + start * inner;
                            let src = o * len * inner;
                            out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                        }
                        out
                    });
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contribution: impl FnOnce() -> Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    let c = contribution();
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(c) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(c),
    }
}

fn transpose_raw(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Gradient stored by the last [`Tape::backward`], for trainable leaves.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.value().mul(&other.value())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(self.value().scale(s), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + s), Op::AddScalar(self.id))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        Ok(self.unary(x.map(f64::sqrt), Op::Sqrt(self.id)))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        Ok(self.unary(x.map(f64::ln), Op::Log(self.id)))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn softmax_rows(&self, scale: f64) -> Result<Var<'t>> {
        let v = self.value().softmax_rows(scale)?;
        Ok(self.unary(v, Op::SoftmaxRows(self.id, scale)))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().mean()), Op::Mean(self.id))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value().slice(axis, start, len)?;
        Ok(self.unary(v, Op::Slice { input: self.id, axis, start }))
    }

    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let total = self.value().shape().get(axis).copied();
        if total != Some(sizes.iter().sum()) {
            return Err(Error::Shape(format!("split sizes {sizes:?} do not tile axis {axis} of {:?}", self.shape())));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.slice(axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat(&refs, axis)?;
        let rg = parts.iter().any(Var::requires_grad);
        Ok(first.tape.push(v, Op::Concat(parts.iter().map(|p| p.id).collect(), axis), rg))
    }
}
