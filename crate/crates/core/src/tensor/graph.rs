use std::sync::Arc;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Sqrt(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations. Nodes are appended in evaluation order, so
/// the tape is already topologically sorted and backprop replays it in
/// reverse.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    tracking: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes the loss does not
    /// depend on get a zero tensor of the node's shape.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: true,
        }
    }

    /// A graph that evaluates ops without recording them for backprop.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: false,
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.tracking && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf. Shares storage with the caller's tensor.
    pub fn param(&mut self, value: Arc<Tensor>) -> Var {
        let tracking = self.tracking;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: tracking,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix("matmul", ta)?;
        let (k2, n) = as_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let t = Tensor {
            shape: vec![m, n],
            data: out,
        };
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let t = zip_map(ta, tb, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// `a[B, N] + bias[N]`, broadcasting the bias over the batch axis.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = as_matrix("add_row", ta)?;
        if tb.shape() != [n] {
            return Err(Error::shape("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data.clone();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(&tb.data) {
                *x += b;
            }
        }
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(t, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let t = zip_map(ta, tb, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let t = zip_map(ta, tb, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::sin);
        self.push(t, Op::Sin(a), &[a])
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::cos);
        self.push(t, Op::Cos(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::sqrt);
        self.push(t, Op::Sqrt(a), &[a])
    }

    /// Sum of a matrix over `axis` (0 = rows, 1 = columns); a vector is
    /// reduced to a scalar with axis 0.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = reduce_axis(self.value(a), axis, "sum_axis")?;
        Ok(self.push(t, Op::SumAxis(a, axis), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let n = axis_len(ta, axis, "mean_axis")?;
        let mut t = reduce_axis(ta, axis, "mean_axis")?;
        let inv = 1.0 / n as f64;
        t.data.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(t, Op::MeanAxis(a, axis), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::scalar(ta.sum() / ta.len().max(1) as f64);
        self.push(t, Op::MeanAll(a), &[a])
    }

    /// Concatenate along the feature (last) axis. Matrices must share the
    /// row count; vectors are joined end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = self.value(parts[0]);
        let t = match first.shape().len() {
            1 => {
                let mut data = Vec::new();
                for &p in parts {
                    let tp = self.value(p);
                    if tp.shape().len() != 1 {
                        return Err(Error::shape("concat", first.shape(), tp.shape()));
                    }
                    data.extend_from_slice(tp.data());
                }
                Tensor::vector(data)
            }
            2 => {
                let rows = first.shape()[0];
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let tp = self.value(p);
                    match tp.shape() {
                        [r, c] if *r == rows => widths.push(*c),
                        s => return Err(Error::shape("concat", first.shape(), s)),
                    }
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for i in 0..rows {
                    for (&p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
                    }
                }
                Tensor {
                    shape: vec![rows, total],
                    data,
                }
            }
            _ => return Err(Error::shape("concat", first.shape(), &[])),
        };
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape[0], ta.shape[1]);
                    let n = tb.shape[1];
                    if needs(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g.data, false, &tb.data, true, 0.0, &mut da);
                        accumulate(
                            &mut grads[a.0],
                            Tensor {
                                shape: vec![m, k],
                                data: da,
                            },
                        );
                    }
                    if needs(b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, &ta.data, true, &g.data, false, 0.0, &mut db);
                        accumulate(
                            &mut grads[b.0],
                            Tensor {
                                shape: vec![k, n],
                                data: db,
                            },
                        );
                    }
                }
                Op::Add(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::AddRow(a, bias) => {
                    if needs(bias) {
                        let n = self.value(*bias).len();
                        let mut db = vec![0.0; n];
                        for row in g.data.chunks(n) {
                            for (d, x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        accumulate(&mut grads[bias.0], Tensor::vector(db));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.map(|x| -x));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if needs(a) {
                        accumulate(&mut grads[a.0], zip_map(&g, tb, |x, y| x * y));
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], zip_map(&g, ta, |x, y| x * y));
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads[a.0], g.map(|x| x * f));
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let d = zip_map(&g, ta, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sin(a) => {
                    let d = zip_map(&g, self.value(*a), |x, y| x * y.cos());
                    accumulate(&mut grads[a.0], d);
                }
                Op::Cos(a) => {
                    let d = zip_map(&g, self.value(*a), |x, y| -x * y.sin());
                    accumulate(&mut grads[a.0], d);
                }
                Op::Square(a) => {
                    let d = zip_map(&g, self.value(*a), |x, y| 2.0 * x * y);
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sqrt(a) => {
                    let d = zip_map(&g, &node.value, |x, y| x / (2.0 * y));
                    accumulate(&mut grads[a.0], d);
                }
                Op::SumAxis(a, axis) => {
                    let d = broadcast_back(self.value(*a), &g, *axis, 1.0);
                    accumulate(&mut grads[a.0], d);
                }
                Op::MeanAxis(a, axis) => {
                    let ta = self.value(*a);
                    let n = axis_len(ta, *axis, "mean_axis")?;
                    let d = broadcast_back(ta, &g, *axis, 1.0 / n as f64);
                    accumulate(&mut grads[a.0], d);
                }
                Op::SumAll(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads[a.0], Tensor::full(ta.shape(), g.data[0]));
                }
                Op::MeanAll(a) => {
                    let ta = self.value(*a);
                    let v = g.data[0] / ta.len().max(1) as f64;
                    accumulate(&mut grads[a.0], Tensor::full(ta.shape(), v));
                }
                Op::Concat(parts) => {
                    let out_shape = &node.value.shape;
                    if out_shape.len() == 1 {
                        let mut off = 0;
                        for p in parts {
                            let w = self.value(*p).len();
                            if needs(p) {
                                let d = Tensor::vector(g.data[off..off + w].to_vec());
                                accumulate(&mut grads[p.0], d);
                            }
                            off += w;
                        }
                    } else {
                        let (rows, total) = (out_shape[0], out_shape[1]);
                        let mut off = 0;
                        for p in parts {
                            let w = self.value(*p).shape[1];
                            if needs(p) {
                                let mut data = Vec::with_capacity(rows * w);
                                for i in 0..rows {
                                    data.extend_from_slice(
                                        &g.data[i * total + off..i * total + off + w],
                                    );
                                }
                                accumulate(
                                    &mut grads[p.0],
                                    Tensor {
                                        shape: vec![rows, w],
                                        data,
                                    },
                                );
                            }
                            off += w;
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn axis_len(t: &Tensor, axis: usize, op: &'static str) -> Result<usize> {
    match (t.shape(), axis) {
        ([n], 0) => Ok(*n),
        ([r, _], 0) => Ok(*r),
        ([_, c], 1) => Ok(*c),
        (s, _) => Err(Error::shape(op, s, &[axis])),
    }
}

fn reduce_axis(t: &Tensor, axis: usize, op: &'static str) -> Result<Tensor> {
    match (t.shape(), axis) {
        ([_], 0) => Ok(Tensor::scalar(t.sum())),
        ([_, c], 0) => {
            let mut out = vec![0.0; *c];
            for row in t.data.chunks(*c) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Ok(Tensor::vector(out))
        }
        ([_, c], 1) => Ok(Tensor::vector(
            t.data.chunks(*c).map(|r| r.iter().sum()).collect(),
        )),
        (s, _) => Err(Error::shape(op, s, &[axis])),
    }
}

fn broadcast_back(input: &Tensor, g: &Tensor, axis: usize, factor: f64) -> Tensor {
    let mut out = Tensor::zeros(input.shape());
    match (input.shape(), axis) {
        ([_], _) => out.data.iter_mut().for_each(|x| *x = g.data[0] * factor),
        ([_, c], 0) => {
            for row in out.data.chunks_mut(*c) {
                for (x, gv) in row.iter_mut().zip(&g.data) {
                    *x = gv * factor;
                }
            }
        }
        ([_, c], _) => {
            for (row, gv) in out.data.chunks_mut(*c).zip(&g.data) {
                row.iter_mut().for_each(|x| *x = gv * factor);
            }
        }
        _ => unreachable!("validated in forward"),
    }
    out
}
