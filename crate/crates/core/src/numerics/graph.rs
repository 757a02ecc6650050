//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation evaluates eagerly and appends a node to the graph. Node
//! indices are assigned in evaluation order, so the reverse of insertion
//! order is a valid reverse topological order for the backward sweep.
//!
//! Shape mismatches inside the graph are programming errors and panic; the
//! public model and loss APIs validate shapes before building graphs.

use super::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use super::tensor::{matmul_grad_lhs, matmul_grad_rhs, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    BroadcastRow(Var),
    BroadcastCol(Var),
    MatMul(Var, Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Lgamma(Var),
    Digamma(Var),
    Square(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    trainable: bool,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn assert_same(a: &Tensor, b: &Tensor, what: &str) {
    assert!(
        a.same_shape(b),
        "{what}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise overflow-safe ln(1 + exp(x)).
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::domain("softplus input must be finite"));
    }
    Ok(x.map(softplus_scalar))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.nodes[v.0].trainable = true;
        v
    }

    pub fn parameters(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_same(va, vb, "elementwise op");
        let value = va.zip_map(vb, f);
        let rg = self.rg(a) || self.rg(b);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Repeats a 1×n row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows(), 1, "broadcast_row expects a single row");
        let mut values = Vec::with_capacity(rows * v.cols());
        for _ in 0..rows {
            values.extend_from_slice(v.values());
        }
        let value = Tensor::from_rows(rows, v.cols(), values);
        let rg = self.rg(a);
        self.push(Op::BroadcastRow(a), value, rg)
    }

    /// Repeats an m×1 column `cols` times.
    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.cols(), 1, "broadcast_col expects a single column");
        let mut values = Vec::with_capacity(v.rows() * cols);
        for &x in v.values() {
            values.extend(std::iter::repeat_n(x, cols));
        }
        let value = Tensor::from_rows(v.rows(), cols, values);
        let rg = self.rg(a);
        self.push(Op::BroadcastCol(a), value, rg)
    }

    /// Adds a 1×n bias row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let rows = self.value(a).rows();
        let b = self.broadcast_row(row, rows);
        self.add(a, b)
    }

    /// Multiplies every row of an m×n matrix by the matching entry of an m×1 column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let cols = self.value(a).cols();
        let b = self.broadcast_col(col, cols);
        self.mul(a, b)
    }

    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let cols = self.value(a).cols();
        let b = self.broadcast_col(col, cols);
        self.div(a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        assert_eq!(
            k,
            vb.rows(),
            "matmul inner dimensions {m}x{k} · {}x{n}",
            vb.rows()
        );
        let mut out = vec![0.0; m * n];
        matmul_into(va.values(), vb.values(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), Tensor::from_rows(m, n, out), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus_scalar)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    /// Elementwise ln Γ; entries must be positive.
    pub fn lgamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::Lgamma(a), lgamma_unchecked)
    }

    /// Elementwise ψ; entries must be positive.
    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::Digamma(a), digamma_unchecked)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// m×n → m×1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let values = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let value = Tensor::from_rows(v.rows(), 1, values);
        let rg = self.rg(a);
        self.push(Op::SumRows(a), value, rg)
    }

    /// m×n → 1×n.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut values = vec![0.0; v.cols()];
        for i in 0..v.rows() {
            for (o, x) in values.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        let value = Tensor::from_rows(1, v.cols(), values);
        let rg = self.rg(a);
        self.push(Op::SumCols(a), value, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::SumAll(a), value, rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut values = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                values.extend_from_slice(v.row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_rows(rows, total, values),
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let mut values = Vec::with_capacity(v.rows() * len);
        for i in 0..v.rows() {
            values.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let value = Tensor::from_rows(v.rows(), len, values);
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start), value, rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_rows(
            loss_value.rows(),
            loss_value.cols(),
            vec![1.0],
        ));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.rg(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.values_mut().iter_mut().zip(contribution.values()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(vb, |x, y| x / y));
                }
                if self.rg(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = g.zip_map(out, |x, q| -x * q);
                    self.accumulate(grads, *b, t.zip_map(vb, |x, y| x / y));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| c * x));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::BroadcastRow(a) => {
                let cols = g.cols();
                let mut values = vec![0.0; cols];
                for i in 0..g.rows() {
                    for (o, x) in values.iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_rows(1, cols, values));
            }
            Op::BroadcastCol(a) => {
                let values = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                self.accumulate(grads, *a, Tensor::from_rows(g.rows(), 1, values));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_grad_lhs(g.values(), vb.values(), &mut da, m, k, n);
                    self.accumulate(grads, *a, Tensor::from_rows(m, k, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_grad_rhs(va.values(), g.values(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::from_rows(k, n, db));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let va = self.value(*a);
                let d = g.zip_map(va, |x, v| if v > 0.0 { x } else { slope * x });
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(*a), |x, v| x * sigmoid(v));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, e| x * e)),
            Op::Ln(a) => {
                let d = g.zip_map(self.value(*a), |x, v| x / v);
                self.accumulate(grads, *a, d);
            }
            Op::Lgamma(a) => {
                let d = g.zip_map(self.value(*a), |x, v| x * digamma_unchecked(v));
                self.accumulate(grads, *a, d);
            }
            Op::Digamma(a) => {
                let d = g.zip_map(self.value(*a), |x, v| x * trigamma_unchecked(v));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(self.value(*a), |x, v| 2.0 * x * v);
                self.accumulate(grads, *a, d);
            }
            Op::SumRows(a) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut values = Vec::with_capacity(va.len());
                for &x in g.values() {
                    values.extend(std::iter::repeat_n(x, cols));
                }
                self.accumulate(grads, *a, Tensor::from_rows(va.rows(), cols, values));
            }
            Op::SumCols(a) => {
                let va = self.value(*a);
                let mut values = Vec::with_capacity(va.len());
                for _ in 0..va.rows() {
                    values.extend_from_slice(g.values());
                }
                self.accumulate(grads, *a, Tensor::from_rows(va.rows(), va.cols(), values));
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                let x = g.item();
                self.accumulate(grads, *a, Tensor::filled(va.rows(), va.cols(), x));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if self.rg(p) {
                        let mut values = Vec::with_capacity(g.rows() * width);
                        for i in 0..g.rows() {
                            values.extend_from_slice(&g.row(i)[offset..offset + width]);
                        }
                        self.accumulate(grads, p, Tensor::from_rows(g.rows(), width, values));
                    }
                    offset += width;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows(), va.cols());
                let len = g.cols();
                for i in 0..g.rows() {
                    d.row_mut(i)[*start..*start + len].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(
                    self.value(*a),
                    |x, v| if v >= lo && v <= hi { x } else { 0.0 },
                );
                self.accumulate(grads, *a, d);
            }
        }
    }
}
