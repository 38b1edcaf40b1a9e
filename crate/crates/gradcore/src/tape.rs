//! Operation tape with reverse-mode differentiation.
//!
//! Every op appends one node holding its output value. `backward` walks the
//! nodes in exact reverse order, so replaying the same op sequence on the same
//! inputs reproduces gradients bit for bit.

use crate::error::{dim_err, GradError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, transpose_raw, Tensor};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Generic op selector for [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Multiply,
    Relu,
    /// Softmax along the given axis of a matrix: `Cols` normalises each row.
    Softmax(Axis),
    LayerNorm,
    Concat(Axis),
    Mean,
    Sum,
    Sigmoid,
    Log,
    Exp,
    Negate,
    Scale(f64),
    Dot,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Neg(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: Axis,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    Dot(Var, Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    L2NormRows {
        x: Var,
        norms: Vec<f64>,
    },
    GroupedDot {
        q: Var,
        m: Var,
        group: usize,
    },
    GroupedCombine {
        p: Var,
        v: Var,
        group: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a single forward pass. One tape per forward; never shared.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node, if it was reachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into `store`. Parameters the loss does not
    /// reach keep a zero gradient but count as graded.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                store.accumulate(id, g);
            }
        }
        store.mark_all_graded();
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return dim_err(op, format!("expected a matrix, got shape {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input tensor; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Like [`Tape::param`] but detached: the parameter is read, not trained.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Multiply | OpKind::Dot => 2,
            OpKind::LayerNorm => 3,
            OpKind::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(GradError::Contract(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Multiply => self.mul(inputs[0], inputs[1]),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::Softmax(axis) => self.softmax(inputs[0], axis),
            OpKind::LayerNorm => self.layer_norm(inputs[0], inputs[1], inputs[2], 1e-9),
            OpKind::Concat(axis) => self.concat(inputs, axis),
            OpKind::Mean => Ok(self.mean(inputs[0])),
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Log => Ok(self.log(inputs[0])),
            OpKind::Exp => Ok(self.exp(inputs[0])),
            OpKind::Negate => Ok(self.neg(inputs[0])),
            OpKind::Scale(c) => Ok(self.scale(inputs[0], c)),
            OpKind::Dot => self.dot(inputs[0], inputs[1]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = require_rank2("matmul", ta)?;
        let (k2, m) = require_rank2("matmul", tb)?;
        if k != k2 {
            return dim_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape()));
        }
        let out = matmul_raw(ta.data(), tb.data(), n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds a length-`m` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let m = tx.cols();
        if tb.len() != m {
            return dim_err(
                "add_bias",
                format!("input {:?} with bias {:?}", tx.shape(), tb.shape()),
            );
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("multiply", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(0.0) + (-v.abs()).exp().ln_1p(),
            Op::Softplus(x),
        )
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        match axis {
            Axis::Cols => self.softmax_rows(x),
            Axis::Rows => {
                let t = self.transpose(x)?;
                let s = self.softmax_rows(t)?;
                self.transpose(s)
            }
        }
    }

    /// Softmax over each row (the trailing axis), with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let m = tx.cols();
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SoftmaxRows(x), ng))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let m = tx.cols();
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::LogSoftmaxRows(x), ng))
    }

    /// Row-wise layer normalisation followed by the affine `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let m = tx.cols();
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return dim_err(
                "layer_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    tx.shape(),
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            );
        }
        let rows = tx.rows();
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in tx.data().chunks(m) {
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - mu) * inv));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| v * g[i % m] + b[i % m])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var> {
        if inputs.is_empty() {
            return Err(GradError::Contract("concat of zero tensors".into()));
        }
        let shapes: Vec<Vec<usize>> = inputs
            .iter()
            .map(|&v| self.value(v).shape().to_vec())
            .collect();
        for s in &shapes {
            if s.len() != 2 {
                return dim_err("concat", format!("expected matrices, got {shapes:?}"));
            }
        }
        let out = match axis {
            Axis::Rows => {
                let cols = shapes[0][1];
                if shapes.iter().any(|s| s[1] != cols) {
                    return dim_err("concat", format!("column mismatch {shapes:?}"));
                }
                let mut data = Vec::new();
                for &v in inputs {
                    data.extend_from_slice(self.value(v).data());
                }
                let rows = shapes.iter().map(|s| s[0]).sum();
                Tensor::new(vec![rows, cols], data)?
            }
            Axis::Cols => {
                let rows = shapes[0][0];
                if shapes.iter().any(|s| s[0] != rows) {
                    return dim_err("concat", format!("row mismatch {shapes:?}"));
                }
                let cols: usize = shapes.iter().map(|s| s[1]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::new(vec![rows, cols], data)?
            }
        };
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Gathers rows of `table` by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, d) = require_rank2("embedding_lookup", t)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= vocab {
                return dim_err(
                    "embedding_lookup",
                    format!("id {i} outside table of {vocab} rows"),
                );
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let ng = self.ng(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().sum::<f64>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Sum(x), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return dim_err("dot", format!("{:?} . {:?}", ta.shape(), tb.shape()));
        }
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = require_rank2("transpose", t)?;
        let out = Tensor::new(vec![c, r], transpose_raw(t.data(), r, c))?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Transpose(x), ng))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = require_rank2("slice_cols", t)?;
        if start + len > c || len == 0 {
            return dim_err(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, t.shape()),
            );
        }
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&t.row(row)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.cols();
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.rows());
        for row in out.data_mut().chunks_mut(m) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let ng = self.ng(x);
        self.push(out, Op::L2NormRows { x, norms }, ng)
    }

    /// `S[r, j] = q[r] · m[r·group + j]`: each query row scores its own
    /// block of `group` rows.
    pub fn grouped_dot(&mut self, q: Var, m: Var, group: usize) -> Result<Var> {
        let (tq, tm) = (self.value(q), self.value(m));
        let (r, d) = require_rank2("grouped_dot", tq)?;
        let (mr, md) = require_rank2("grouped_dot", tm)?;
        if md != d || mr != r * group || group == 0 {
            return dim_err(
                "grouped_dot",
                format!("query {:?}, memory {:?}, group {group}", tq.shape(), tm.shape()),
            );
        }
        let mut out = Vec::with_capacity(r * group);
        for i in 0..r {
            let qi = tq.row(i);
            for j in 0..group {
                let mj = tm.row(i * group + j);
                out.push(qi.iter().zip(mj).map(|(a, b)| a * b).sum());
            }
        }
        let out = Tensor::new(vec![r, group], out)?;
        let ng = self.ng(q) || self.ng(m);
        Ok(self.push(out, Op::GroupedDot { q, m, group }, ng))
    }

    /// `out[r] = Σ_j p[r, j] · v[r·group + j]`.
    pub fn grouped_combine(&mut self, p: Var, v: Var, group: usize) -> Result<Var> {
        let (tp, tv) = (self.value(p), self.value(v));
        let (r, g) = require_rank2("grouped_combine", tp)?;
        let (vr, d) = require_rank2("grouped_combine", tv)?;
        if g != group || vr != r * group {
            return dim_err(
                "grouped_combine",
                format!("weights {:?}, values {:?}, group {group}", tp.shape(), tv.shape()),
            );
        }
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..group {
                let w = tp.get2(i, j);
                for (x, y) in o.iter_mut().zip(tv.row(i * group + j)) {
                    *x += w * y;
                }
            }
        }
        let out = Tensor::new(vec![r, d], out)?;
        let ng = self.ng(p) || self.ng(v);
        Ok(self.push(out, Op::GroupedCombine { p, v, group }, ng))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(GradError::Contract("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(GradError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((*id, Var(idx)));
                    continue;
                }
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads);
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        let with_data = |shape: &[usize], data: Vec<f64>| {
            Tensor::new(shape.to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                if self.ng(*a) {
                    send(*a, with_data(&[n, k], matmul_bt_raw(g.data(), tb.data(), n, m, k)));
                }
                if self.ng(*b) {
                    send(*b, with_data(&[k, m], matmul_at_raw(ta.data(), g.data(), n, k, m)));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddBias(x, b) => {
                send(*x, g.clone());
                if self.ng(*b) {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*b, with_data(self.value(*b).shape(), gb));
                }
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    send(*a, with_data(g.shape(), d));
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    send(*b, with_data(g.shape(), d));
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*x, with_data(g.shape(), d));
            }
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, s)| gv * s * (1.0 - s))
                    .collect();
                send(*x, with_data(g.shape(), d));
            }
            Op::Softplus(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| gv * sigmoid(*xv))
                    .collect();
                send(*x, with_data(g.shape(), d));
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, xv)| gv / xv).collect();
                send(*x, with_data(g.shape(), d));
            }
            Op::Exp(x) => {
                let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv).collect();
                send(*x, with_data(g.shape(), d));
            }
            Op::Neg(x) => send(*x, g.map(|v| -v)),
            Op::Scale(x, c) => {
                let c = *c;
                send(*x, g.map(|v| v * c));
            }
            Op::SoftmaxRows(x) => {
                let m = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(m).zip(g.data().chunks(m)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - s)));
                }
                send(*x, with_data(y.shape(), d));
            }
            Op::LogSoftmaxRows(x) => {
                let m = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(m).zip(g.data().chunks(m)) {
                    let s: f64 = gr.iter().sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * s));
                }
                send(*x, with_data(y.shape(), d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let m = y.cols();
                let gam = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let mut gg = vec![0.0; m];
                    for (i, (gv, xh)) in g.data().iter().zip(xhat).enumerate() {
                        gg[i % m] += gv * xh;
                    }
                    send(*gamma, with_data(self.value(*gamma).shape(), gg));
                }
                if self.ng(*beta) {
                    let mut gb = vec![0.0; m];
                    for (i, gv) in g.data().iter().enumerate() {
                        gb[i % m] += gv;
                    }
                    send(*beta, with_data(self.value(*beta).shape(), gb));
                }
                if self.ng(*x) {
                    let mut d = Vec::with_capacity(y.len());
                    let n = m as f64;
                    for (r, (gr, xr)) in g.data().chunks(m).zip(xhat.chunks(m)).enumerate() {
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        d.extend(
                            dxhat
                                .iter()
                                .zip(xr)
                                .map(|(dh, xh)| inv / n * (n * dh - s1 - xh * s2)),
                        );
                    }
                    send(*x, with_data(y.shape(), d));
                }
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Rows => {
                    let cols = y.cols();
                    let mut offset = 0;
                    for &v in inputs {
                        let t = self.value(v);
                        let n = t.len();
                        if self.ng(v) {
                            send(v, with_data(t.shape(), g.data()[offset..offset + n].to_vec()));
                        }
                        offset += n;
                        debug_assert_eq!(t.cols(), cols);
                    }
                }
                Axis::Cols => {
                    let rows = y.rows();
                    let mut col = 0;
                    for &v in inputs {
                        let t = self.value(v);
                        let c = t.cols();
                        if self.ng(v) {
                            let mut d = Vec::with_capacity(t.len());
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[col..col + c]);
                            }
                            send(v, with_data(t.shape(), d));
                        }
                        col += c;
                    }
                }
            },
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut acc = vec![0.0; t.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (a, v) in acc[id * d..(id + 1) * d].iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                send(*table, with_data(t.shape(), acc));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let v = g.item() / t.len() as f64;
                send(*x, Tensor::filled(t.shape(), v));
            }
            Op::Sum(x) => {
                let t = self.value(*x);
                send(*x, Tensor::filled(t.shape(), g.item()));
            }
            Op::Dot(a, b) => {
                let s = g.item();
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, tb.map(|v| v * s).reshape(ta.shape().to_vec()).expect("dot"));
                }
                if self.ng(*b) {
                    send(*b, ta.map(|v| v * s).reshape(tb.shape().to_vec()).expect("dot"));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                send(*x, with_data(&[c, r], transpose_raw(g.data(), r, c)));
            }
            Op::SliceCols { x, start } => {
                let t = self.value(*x);
                let c = t.cols();
                let len = y.cols();
                let mut d = vec![0.0; t.len()];
                for r in 0..t.rows() {
                    d[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                send(*x, with_data(t.shape(), d));
            }
            Op::L2NormRows { x, norms } => {
                let m = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (r, (yr, gr)) in y.data().chunks(m).zip(g.data().chunks(m)).enumerate() {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * s) / norms[r]));
                }
                send(*x, with_data(y.shape(), d));
            }
            Op::GroupedDot { q, m, group } => {
                let (tq, tm) = (self.value(*q), self.value(*m));
                let (r, dd) = (tq.shape()[0], tq.shape()[1]);
                if self.ng(*q) {
                    let mut dq = vec![0.0; r * dd];
                    for i in 0..r {
                        for j in 0..*group {
                            let w = g.get2(i, j);
                            for (a, b) in dq[i * dd..(i + 1) * dd].iter_mut().zip(tm.row(i * group + j)) {
                                *a += w * b;
                            }
                        }
                    }
                    send(*q, with_data(tq.shape(), dq));
                }
                if self.ng(*m) {
                    let mut dm = vec![0.0; tm.len()];
                    for i in 0..r {
                        for j in 0..*group {
                            let w = g.get2(i, j);
                            let row = i * group + j;
                            for (a, b) in dm[row * dd..(row + 1) * dd].iter_mut().zip(tq.row(i)) {
                                *a += w * b;
                            }
                        }
                    }
                    send(*m, with_data(tm.shape(), dm));
                }
            }
            Op::GroupedCombine { p, v, group } => {
                let (tp, tv) = (self.value(*p), self.value(*v));
                let r = tp.shape()[0];
                let dd = tv.cols();
                if self.ng(*p) {
                    let mut dp = Vec::with_capacity(r * group);
                    for i in 0..r {
                        for j in 0..*group {
                            dp.push(g.row(i).iter().zip(tv.row(i * group + j)).map(|(a, b)| a * b).sum());
                        }
                    }
                    send(*p, with_data(tp.shape(), dp));
                }
                if self.ng(*v) {
                    let mut dv = vec![0.0; tv.len()];
                    for i in 0..r {
                        for j in 0..*group {
                            let w = tp.get2(i, j);
                            let row = i * group + j;
                            for (a, b) in dv[row * dd..(row + 1) * dd].iter_mut().zip(g.row(i)) {
                                *a += w * b;
                            }
                        }
                    }
                    send(*v, with_data(tv.shape(), dv));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let y = t.softmax(x, Axis::Cols).unwrap();
        approx(t.value(y).data(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![1000.0, 1000.0]).unwrap());
        let y = t.softmax_rows(x).unwrap();
        approx(t.value(y).data(), &[0.5, 0.5], 1e-15);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]), true);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn self_dot_gradient_is_twice_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let d = t.dot(x, x).unwrap();
        let g = t.backward(d).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(GradError::Contract(_))));
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn unreachable_parameters_get_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
        let unused = store.add("unused", Tensor::vector(vec![3.0]));
        let mut t = Tape::new();
        let u = t.param(&store, used);
        let s = t.sum(u);
        t.backward(s).unwrap().accumulate_into(&mut store);
        assert_eq!(store.grad(used).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(store.grad(unused).unwrap().data(), &[0.0]);
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 1.3 - 2.0).collect();
        let x = t.constant(Tensor::matrix(3, 4, data).unwrap());
        let g = t.constant(Tensor::filled(&[4], 1.0));
        let b = t.constant(Tensor::zeros(&[4]));
        let y = t.layer_norm(x, g, b, 1e-9).unwrap();
        for row in t.value(y).data().chunks(4) {
            let mu = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0;
            assert!(mu.abs() < 1e-7);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
