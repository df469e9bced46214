//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every operation appends one node holding its forward value. Nodes whose
//! inputs are all constants are stored as constants: they are not recorded
//! for the backward pass. `backward` consumes the tape, so a tape serves
//! exactly one gradient computation.

use super::tensor::{softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    LogSoftmax(Var),
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Take(Var, Vec<usize>),
    RepeatRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
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

    /// Places a tensor on the tape; it is differentiable if `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_grad())
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let value = if value.requires_grad() {
            Tensor::new(value.shape().to_vec(), value.into_data()).expect("same shape")
        } else {
            value
        };
        self.leaf(value)
    }

    /// Constant copy of `v`; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// `m × n` plus a `1 × n` row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).matrix_dims("add_row")?;
        let r = self.value(row);
        if r.rows() != 1 || r.cols() != n || r.rank() > 2 {
            return Err(Error::shape("add_row", self.value(a).shape(), r.shape()));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, b) in data[i * n..(i + 1) * n].iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a), &[a])
    }

    /// Softmax along `axis` of a matrix (1 = within each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = self.value(a).softmax(axis)?;
        Ok(self.push(value, Op::Softmax(a, axis), &[a]))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("log_softmax input"));
        }
        let (m, n) = x.matrix_dims("log_softmax")?;
        let mut data = x.data().to_vec();
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let lse = super::tensor::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::LogSoftmax(a), &[a]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Average of the rows: `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).matrix_dims("mean_rows")?;
        if m == 0 {
            return Err(Error::NoValidFrames);
        }
        let x = self.value(a);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.value(a).matrix_dims("concat_cols")?;
        let (mb, nb) = self.value(b).matrix_dims("concat_cols")?;
        if m != mb {
            return Err(Error::shape(
                "concat_cols",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let (xa, xb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            data.extend_from_slice(xa.row_slice(r));
            data.extend_from_slice(xb.row_slice(r));
        }
        let value = Tensor::new(vec![m, na + nb], data)?;
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Stacks `1 × n` rows into an `m × n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let n = rows
            .first()
            .map(|&v| self.value(v).numel())
            .ok_or_else(|| Error::invalid("stack_rows of nothing"))?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let x = self.value(r);
            if x.numel() != n {
                return Err(Error::shape("stack_rows", &[n], x.shape()));
            }
            data.extend_from_slice(x.data());
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec()), rows))
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).matrix_dims("gather_rows")?;
        let x = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::invalid(format!("row index {i} out of 0..{m}")));
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let value = Tensor::new(vec![indices.len(), n], data)?;
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// Selects elements by flat index into a `1 × len` row.
    pub fn take(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            let v = *x
                .data()
                .get(i)
                .ok_or_else(|| Error::invalid(format!("flat index {i} out of 0..{}", x.numel())))?;
            data.push(v);
        }
        Ok(self.push(Tensor::row(data), Op::Take(a, indices.to_vec()), &[a]))
    }

    /// Repeats a `1 × n` row `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 || x.rank() > 2 {
            return Err(Error::shape("repeat_rows", x.shape(), &[1, x.cols()]));
        }
        let n = x.cols();
        let data: Vec<f64> = (0..times).flat_map(|_| x.data().iter().copied()).collect();
        let value = Tensor::new(vec![times, n], data)?;
        Ok(self.push(value, Op::RepeatRows(a), &[a]))
    }

    /// Replays the tape in reverse from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, delta: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                            *e += d;
                        }
                    }
                    slot @ None => {
                        *slot = Some(delta.reshape(&shapes[v.0]).expect("gradient shape"));
                    }
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!("leaves are handled above"),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&val(*b).transpose()?)?;
                    let gb = val(*a).transpose()?.matmul(&g)?;
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut col_sums = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (s, v) in col_sums.iter_mut().zip(g.row_slice(r)) {
                            *s += v;
                        }
                    }
                    acc(*row, Tensor::row(col_sums));
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(*b), "mul", |x, y| x * y)?;
                    let gb = g.zip_map(val(*a), "mul", |x, y| x * y)?;
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(*a, g.map(|x| x * c));
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, "tanh", |x, y| x * (1.0 - y * y))?;
                    acc(*a, d);
                }
                Op::Exp(a) => {
                    let d = g.zip_map(&node.value, "exp", |x, y| x * y)?;
                    acc(*a, d);
                }
                Op::Log(a) => {
                    let d = g.zip_map(val(*a), "log", |x, y| x / y)?;
                    acc(*a, d);
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut d = vec![0.0; m * n];
                    let (gd, yd) = (g.data(), y.data());
                    if *axis == 1 {
                        for r in 0..m {
                            let span = r * n..(r + 1) * n;
                            let dot: f64 = gd[span.clone()].iter().zip(&yd[span.clone()]).map(|(a, b)| a * b).sum();
                            for i in span {
                                d[i] = yd[i] * (gd[i] - dot);
                            }
                        }
                    } else {
                        for c in 0..n {
                            let dot: f64 = (0..m).map(|r| gd[r * n + c] * yd[r * n + c]).sum();
                            for r in 0..m {
                                let i = r * n + c;
                                d[i] = yd[i] * (gd[i] - dot);
                            }
                        }
                    }
                    acc(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        let gs: f64 = g.row_slice(r).iter().sum();
                        let mut p = y.row_slice(r).to_vec();
                        p.iter_mut().for_each(|v| *v = v.exp());
                        for c in 0..n {
                            d[r * n + c] = g.get(r, c) - p[c] * gs;
                        }
                    }
                    acc(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    acc(*a, Tensor::full(&shapes[a.0], s));
                }
                Op::MeanRows(a) => {
                    let (m, n) = (val(*a).rows(), val(*a).cols());
                    let inv = 1.0 / m as f64;
                    let data: Vec<f64> = (0..m).flat_map(|_| g.data().iter().map(move |x| x * inv)).collect();
                    acc(*a, Tensor::new(vec![m, n], data)?);
                }
                Op::Transpose(a) => {
                    acc(*a, g.transpose()?);
                }
                Op::ConcatCols(a, b) => {
                    let na = val(*a).cols();
                    let nb = val(*b).cols();
                    let m = g.rows();
                    let mut ga = Vec::with_capacity(m * na);
                    let mut gb = Vec::with_capacity(m * nb);
                    for r in 0..m {
                        let row = g.row_slice(r);
                        ga.extend_from_slice(&row[..na]);
                        gb.extend_from_slice(&row[na..]);
                    }
                    acc(*a, Tensor::new(vec![m, na], ga)?);
                    acc(*b, Tensor::new(vec![m, nb], gb)?);
                }
                Op::StackRows(rows) => {
                    for (i, r) in rows.iter().enumerate() {
                        acc(*r, Tensor::row(g.row_slice(i).to_vec()));
                    }
                }
                Op::GatherRows(a, indices) => {
                    let (m, n) = (val(*a).rows(), val(*a).cols());
                    let mut d = vec![0.0; m * n];
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, v) in d[i * n..(i + 1) * n].iter_mut().zip(g.row_slice(k)) {
                            *o += v;
                        }
                    }
                    acc(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::Take(a, indices) => {
                    let mut d = Tensor::zeros(&shapes[a.0]);
                    for (k, &i) in indices.iter().enumerate() {
                        d.data_mut()[i] += g.data()[k];
                    }
                    acc(*a, d);
                }
                Op::RepeatRows(a) => {
                    let n = g.cols();
                    let mut s = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (o, v) in s.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    acc(*a, Tensor::row(s));
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

/// Plain softmax of a slice, exposed for callers that do not need a tape.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}
