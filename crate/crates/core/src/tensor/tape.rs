use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Concat(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Sum(Var),
    SelectRows { mask: Vec<bool>, on: Var, off: Var },
    Column(Var, usize),
    StackColumns(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A computation record: nodes appended in evaluation order, so every node's
/// inputs precede it. Built fresh for each forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients of a scalar with respect to every registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    named: Vec<(String, Tensor)>,
    index: HashMap<Var, usize>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.index.get(&var).map(|&i| &self.named[i].1)
    }

    /// Parameter gradients in registration order.
    pub fn into_tensors(self) -> Vec<Tensor> {
        self.named.into_iter().map(|(_, t)| t).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.named.iter().map(|(n, t)| (n.as_str(), t))
    }
}

fn checked(op: &'static str, value: Tensor) -> Result<Tensor> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `c (m×n) = beta*c + a (m×k) · b (k×n)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every offset reachable through the
    // given strides, because each operand is a dense row-major buffer (or its
    // transpose) of exactly the stated dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dimensions `(m, k, n)` of a matmul, treating rank-1 operands as a row
/// vector on the left or a column vector on the right.
fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize, Vec<usize>)> {
    let (m, k, lhs_vec) = match *a {
        [k] => (1, k, true),
        [m, k] => (m, k, false),
        _ => return None,
    };
    let (k2, n, rhs_vec) = match *b {
        [k2] => (k2, 1, true),
        [k2, n] => (k2, n, false),
        _ => return None,
    };
    if k != k2 || (lhs_vec && rhs_vec) {
        return None;
    }
    let shape = match (lhs_vec, rhs_vec) {
        (true, false) => vec![n],
        (false, true) => vec![m],
        _ => vec![m, n],
    };
    Some((m, k, n, shape))
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        _ => {
            let cols = *shape.last().unwrap();
            (shape[..shape.len() - 1].iter().product(), cols)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.params.push((name.into(), v));
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n, shape) = matmul_dims(sa, sb).ok_or_else(|| Error::dim("matmul", sa, sb))?;
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            0.0,
        );
        let value = checked("matmul", Tensor::new(shape, out)?)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = checked(name, Tensor::new(ta.shape().to_vec(), data)?)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = checked(name, self.value(a).map(f))?;
        let rg = self.requires(&[a]);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| k * x, Op::Scale(a, k))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.unary("one_minus", a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Adds vector `b` to every row of `a` (`a` may also be a vector).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, cols) = rows_cols(ta.shape());
        if tb.rank() != 1 || tb.len() != cols || ta.rank() == 0 {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let bias = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias[i % cols])
            .collect();
        let value = checked("add_row", Tensor::new(ta.shape().to_vec(), data)?)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(Op::AddRow(a, b), value, rg))
    }

    /// Scales row `i` of matrix `a` by `c[i]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        let [rows, cols] = ta.shape()[..] else {
            return Err(Error::dim("mul_col", ta.shape(), tc.shape()));
        };
        if tc.rank() != 1 || tc.len() != rows {
            return Err(Error::dim("mul_col", ta.shape(), tc.shape()));
        }
        let factors = tc.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * factors[i / cols])
            .collect();
        let value = checked("mul_col", Tensor::new(ta.shape().to_vec(), data)?)?;
        let rg = self.requires(&[a, c]);
        Ok(self.push(Op::MulCol(a, c), value, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax(a, None)
    }

    /// Softmax over the last axis where entries with `mask[i] == false` are
    /// excluded from normalization and come out exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.is_empty() {
            return Err(Error::dim("softmax", ta.shape(), &[1]));
        }
        if let Some(mask) = mask {
            if mask.len() != ta.len() {
                return Err(Error::dim("softmax", ta.shape(), &[mask.len()]));
            }
        }
        let (_, cols) = rows_cols(ta.shape());
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let x = ta.data();
        let mut out = vec![0.0; x.len()];
        for (r, row) in out.chunks_mut(cols).enumerate() {
            let base = r * cols;
            let max = (0..cols)
                .filter(|&j| keep(base + j))
                .map(|j| x[base + j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("softmax row {r} is fully masked")));
            }
            let mut total = 0.0;
            for (j, o) in row.iter_mut().enumerate() {
                if keep(base + j) {
                    *o = (x[base + j] - max).exp();
                    total += *o;
                }
            }
            for o in row.iter_mut() {
                *o /= total;
            }
        }
        let value = checked("softmax", Tensor::new(ta.shape().to_vec(), out)?)?;
        let rg = self.requires(&[a]);
        Ok(self.push(Op::Softmax(a), value, rg))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat", sa, sb));
        }
        let (rows, p) = rows_cols(sa);
        let q = *sb.last().unwrap();
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(Op::Concat(a, b), value, rg))
    }

    /// Row `id` of an embedding table.
    pub fn embed_lookup(&mut self, table: Var, id: usize) -> Result<Var> {
        let rows = self.gather_rows(table, &[id])?;
        let d = self.shape(table)[1];
        self.reshape(rows, vec![d])
    }

    /// Stacks the table rows named by `ids` into an `ids.len() × d` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let [vocab, d] = tt.shape()[..] else {
            return Err(Error::dim("gather_rows", tt.shape(), &[ids.len()]));
        };
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::OutOfVocabulary { id, size: vocab });
            }
            data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.requires(&[table]);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// `-log softmax(logits)[target]`. A vector of logits with one target
    /// gives a scalar; a `B × V` matrix with `B` targets gives `B` losses.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, vocab) = match tl.shape() {
            [v] => (1, *v),
            [b, v] => (*b, *v),
            s => return Err(Error::dim("cross_entropy", s, &[targets.len()])),
        };
        if rows != targets.len() || vocab == 0 {
            return Err(Error::dim("cross_entropy", tl.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::OutOfVocabulary {
                id: bad,
                size: vocab,
            });
        }
        let x = tl.data();
        let mut probs = vec![0.0; x.len()];
        let mut losses = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            let row = &x[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            // log_z >= row[t] mathematically; clamp rounding below zero.
            losses.push((log_z - row[t]).max(0.0));
        }
        let shape = if tl.rank() == 1 { vec![] } else { vec![rows] };
        let value = checked("cross_entropy", Tensor::new(shape, losses)?)?;
        let rg = self.requires(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            value,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        let value = checked("sum", Tensor::scalar(total))?;
        let rg = self.requires(&[a]);
        Ok(self.push(Op::Sum(a), value, rg))
    }

    /// Row `i` of the result comes from `on` where `mask[i]`, else from `off`.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var> {
        let (ton, toff) = (self.value(on), self.value(off));
        if ton.shape() != toff.shape() || ton.rank() == 0 {
            return Err(Error::dim("select_rows", ton.shape(), toff.shape()));
        }
        let rows = ton.shape()[0];
        if mask.len() != rows {
            return Err(Error::dim("select_rows", ton.shape(), &[mask.len()]));
        }
        let width = ton.len() / rows.max(1);
        let mut data = Vec::with_capacity(ton.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { ton } else { toff };
            data.extend_from_slice(&src.data()[r * width..(r + 1) * width]);
        }
        let value = Tensor::new(ton.shape().to_vec(), data)?;
        let rg = self.requires(&[on, off]);
        Ok(self.push(
            Op::SelectRows {
                mask: mask.to_vec(),
                on,
                off,
            },
            value,
            rg,
        ))
    }

    /// Column `j` of a matrix as a vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let ta = self.value(a);
        let [rows, cols] = ta.shape()[..] else {
            return Err(Error::dim("column", ta.shape(), &[j]));
        };
        if j >= cols {
            return Err(Error::dim("column", ta.shape(), &[j]));
        }
        let data = (0..rows).map(|r| ta.data()[r * cols + j]).collect();
        let value = Tensor::vector(data);
        let rg = self.requires(&[a]);
        Ok(self.push(Op::Column(a, j), value, rg))
    }

    /// Places equal-length vectors side by side as the columns of a matrix.
    pub fn stack_columns(&mut self, columns: &[Var]) -> Result<Var> {
        let Some(&first) = columns.first() else {
            return Err(Error::Contract("stack_columns needs at least one column".into()));
        };
        let rows = self.value(first).len();
        for &c in columns {
            let s = self.shape(c);
            if s.len() != 1 || s[0] != rows {
                return Err(Error::dim("stack_columns", &[rows], s));
            }
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, &c) in columns.iter().enumerate() {
            for (r, &x) in self.value(c).data().iter().enumerate() {
                data[r * cols + j] = x;
            }
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = self.requires(columns);
        Ok(self.push(Op::StackColumns(columns.to_vec()), value, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.requires(&[a]);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Reverse sweep from a single-element `loss`. Every registered parameter
    /// gets a gradient; ones the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let mut named = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (name, var) in &self.params {
            let shape = self.shape(*var).to_vec();
            let grad = match grads.get_mut(var.0).and_then(Option::take) {
                Some(data) => Tensor::new(shape, data)?,
                None => Tensor::zeros(&shape),
            };
            index.insert(*var, named.len());
            named.push((name.clone(), grad));
        }
        Ok(Gradients { named, index })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n, _) = matmul_dims(ta.shape(), tb.shape()).expect("checked in forward");
                if let Some(ga) = self.slot(grads, *a) {
                    // dA (m×k) += dC (m×n) · Bᵀ
                    gemm(m, n, k, g, (n, 1), tb.data(), (1, n), ga, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB (k×n) += Aᵀ · dC
                    gemm(k, m, n, ta.data(), (1, k), g, (n, 1), gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(a, 1.0), (b, 1.0)] {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(d, &x)| *d += sign * x);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(a, 1.0), (b, -1.0)] {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(d, &x)| *d += sign * x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &x), &other) in ga.iter_mut().zip(g).zip(db) {
                        *d += x * other;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &x), &other) in gb.iter_mut().zip(g).zip(da) {
                        *d += x * other;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
                    }
                }
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (self.value(*a), self.value(*c));
                let cols = ta.shape()[1];
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, (d, &x)) in ga.iter_mut().zip(g).enumerate() {
                        *d += x * tc.data()[i / cols];
                    }
                }
                if let Some(gc) = self.slot(grads, *c) {
                    for (r, d) in gc.iter_mut().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        *d += g[span.clone()]
                            .iter()
                            .zip(&ta.data()[span])
                            .map(|(x, v)| x * v)
                            .sum::<f64>();
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &x)| *d += k * x);
                }
            }
            Op::OneMinus(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &x), &t) in ga.iter_mut().zip(g).zip(y) {
                        *d += x * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &x), &s) in ga.iter_mut().zip(g).zip(y) {
                        *d += x * s * (1.0 - s);
                    }
                }
            }
            Op::Softmax(a) => {
                let (_, cols) = rows_cols(node.value.shape());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((gr, yr), dr) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, p)| x * p).sum();
                        for ((d, &x), &p) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += p * (x - dot);
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let p = *self.shape(*a).last().unwrap();
                let q = *self.shape(*b).last().unwrap();
                let rows = g.len().checked_div(p + q).unwrap_or(0);
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..rows {
                        let src = &g[r * (p + q)..r * (p + q) + p];
                        ga[r * p..(r + 1) * p].iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for r in 0..rows {
                        let src = &g[r * (p + q) + p..(r + 1) * (p + q)];
                        gb[r * q..(r + 1) * q].iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * d..(r + 1) * d];
                        gt[id * d..(id + 1) * d].iter_mut().zip(src).for_each(|(t, &x)| *t += x);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(gl) = self.slot(grads, *logits) {
                    let vocab = probs.len() / targets.len();
                    for (r, &t) in targets.iter().enumerate() {
                        let span = r * vocab..(r + 1) * vocab;
                        for (j, (d, &p)) in gl[span.clone()].iter_mut().zip(&probs[span]).enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            *d += g[r] * (p - onehot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SelectRows { mask, on, off } => {
                let width = g.len() / mask.len().max(1);
                for (v, want) in [(on, true), (off, false)] {
                    if let Some(gv) = self.slot(grads, *v) {
                        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m == want) {
                            let span = r * width..(r + 1) * width;
                            gv[span.clone()].iter_mut().zip(&g[span]).for_each(|(d, &x)| *d += x);
                        }
                    }
                }
            }
            Op::Column(a, j) => {
                let cols = self.shape(*a)[1];
                if let Some(ga) = self.slot(grads, *a) {
                    for (r, &x) in g.iter().enumerate() {
                        ga[r * cols + j] += x;
                    }
                }
            }
            Op::StackColumns(columns) => {
                let cols = columns.len();
                for (j, c) in columns.iter().enumerate() {
                    if let Some(gc) = self.slot(grads, *c) {
                        for (r, d) in gc.iter_mut().enumerate() {
                            *d += g[r * cols + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
