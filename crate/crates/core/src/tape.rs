//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation as a node holding its output
//! value, its inputs and the rule used to pull gradients back through it.
//! Nodes are appended in evaluation order, so the node list is always a
//! topological order of the graph and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! ```
//! use imram::tape::Tape;
//! use imram::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule for an operation defined outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Activate(Var, Activation),
    SoftmaxRows { input: Var, scale: f64 },
    NormalizeRows { input: Var, eps: f64 },
    NormalizeCols { input: Var, eps: f64 },
    Transpose(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    GatherRows { table: Var, ids: Vec<usize> },
    SliceRow(Var, usize),
    StackRows(Vec<Var>),
    Grid { items: Vec<Var> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Activate(_, Activation::Relu) => "relu",
            Op::Activate(_, Activation::Tanh) => "tanh",
            Op::Activate(_, Activation::Sigmoid) => "sigmoid",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::NormalizeRows { .. } => "l2_normalize_rows",
            Op::NormalizeCols { .. } => "l2_normalize_cols",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::SliceRow(..) => "slice_row",
            Op::StackRows(..) => "stack_rows",
            Op::Grid { .. } => "grid",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Activate(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::SliceRow(a, _) => vec![*a],
            Op::SoftmaxRows { input, .. }
            | Op::NormalizeRows { input, .. }
            | Op::NormalizeCols { input, .. } => vec![*input],
            Op::GatherRows { table, .. } => vec![*table],
            Op::StackRows(items) | Op::Grid { items } => items.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph. Single-writer: one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("spent", &self.spent)
            .finish()
    }
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    /// Drops every recorded node, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.spent = false;
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Name of the gradient rule recorded for `var`.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    pub fn inputs(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.inputs()
    }

    /// Arguments of every relu on the tape, in recording order.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Tensor> + '_ {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Activate(input, Activation::Relu) => Some(&self.nodes[input.0].value),
            _ => None,
        })
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.spent = false;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.record(value, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.record(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.record(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.record(value, Op::Mul(a, b)))
    }

    /// Broadcast-adds the `1×c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        Ok(self.record(value, Op::AddRow(a, bias)))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let value = self.value(a).mul_col(self.value(col))?;
        Ok(self.record(value, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.record(value, Op::Scale(a, factor))
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let value = self.value(a).activate(kind);
        self.record(value, Op::Activate(a, kind))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn softmax_rows(&mut self, a: Var, scale: f64) -> Result<Var> {
        let value = self.value(a).softmax_rows(scale)?;
        Ok(self.record(value, Op::SoftmaxRows { input: a, scale }))
    }

    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        check_eps(eps)?;
        let value = self.value(a).l2_normalize_rows(eps);
        Ok(self.record(value, Op::NormalizeRows { input: a, eps }))
    }

    pub fn l2_normalize_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        check_eps(eps)?;
        let value = self.value(a).l2_normalize_cols(eps);
        Ok(self.record(value, Op::NormalizeCols { input: a, eps }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.record(value, Op::Transpose(a))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        Ok(self.record(value, Op::ConcatCols(a, b)))
    }

    /// Row lookup `table[ids[r]]`, the embedding primitive.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&id| id >= t.rows()) {
            return Err(Error::Vocabulary {
                id: bad,
                size: t.rows(),
            });
        }
        let mut value = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.record(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let t = self.value(a);
        if row >= t.rows() {
            return Err(Error::shape("slice_row", t.shape(), (row, t.cols())));
        }
        let value = Tensor::from_vec(1, t.cols(), t.row(row).to_vec())?;
        Ok(self.record(value, Op::SliceRow(a, row)))
    }

    /// Vertically stacks tensors that share a column count.
    pub fn stack_rows(&mut self, items: &[Var]) -> Result<Var> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("stack_rows needs at least one input".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in items {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(Error::shape("stack_rows", t.shape(), (rows, cols)));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.record(value, Op::StackRows(items.to_vec())))
    }

    /// Arranges 1×1 values, row-major, into a `rows×cols` matrix.
    pub fn grid(&mut self, items: &[Var], rows: usize, cols: usize) -> Result<Var> {
        if items.len() != rows * cols {
            return Err(Error::shape("grid", (items.len(), 1), (rows, cols)));
        }
        let mut data = Vec::with_capacity(items.len());
        for &v in items {
            let t = self.value(v);
            if t.shape() != (1, 1) {
                return Err(Error::shape("grid", t.shape(), (1, 1)));
            }
            data.push(t.item());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.record(
            value,
            Op::Grid {
                items: items.to_vec(),
            },
        ))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.record(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Pulls the gradient of the scalar `loss` back to every leaf that
    /// requires it. A tape can be swept once per forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Tape(
                "backward already ran; record a new forward pass first".into(),
            ));
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be a 1x1 scalar, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.spent = true;

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.pull_back(node, &g, &mut grads)?;
        }

        // every requires_grad leaf gets a gradient, zero if unreachable
        grads.resize_with(self.nodes.len(), || None);
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *slot = None;
            } else if slot.is_none() {
                let (r, c) = node.value.shape();
                *slot = Some(Tensor::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }

    fn pull_back(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor| {
            if wants(v) {
                accumulate(&mut grads[v.0], t);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    send(*a, g.matmul_nt(val(*b))?);
                }
                if wants(*b) {
                    send(*b, val(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if wants(*a) {
                    send(*a, g.matmul(val(*b))?);
                }
                if wants(*b) {
                    send(*b, g.matmul_tn(val(*a))?);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.hadamard(val(*b))?);
                }
                if wants(*b) {
                    send(*b, g.hadamard(val(*a))?);
                }
            }
            Op::AddRow(a, bias) => {
                send(*a, g.clone());
                if wants(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*bias, gb);
                }
            }
            Op::MulCol(a, col) => {
                if wants(*a) {
                    send(*a, g.mul_col(val(*col))?);
                }
                if wants(*col) {
                    let x = val(*a);
                    let mut gc = Tensor::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        gc.data_mut()[r] = crate::tensor::dot(g.row(r), x.row(r));
                    }
                    send(*col, gc);
                }
            }
            Op::Scale(a, factor) => send(*a, g.scale(*factor)),
            Op::Activate(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let mut ga = g.clone();
                for ((o, &xv), &yv) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o *= kind.derivative(xv, yv);
                }
                send(*a, ga);
            }
            Op::SoftmaxRows { input, scale } => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = crate::tensor::dot(g.row(r), y.row(r));
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = scale * yv * (gv - inner);
                    }
                }
                send(*input, ga);
            }
            Op::NormalizeRows { input, eps } => {
                send(*input, normalize_rows_grad(val(*input), &node.value, g, *eps));
            }
            Op::NormalizeCols { input, eps } => {
                let ga = normalize_rows_grad(
                    &val(*input).transpose(),
                    &node.value.transpose(),
                    &g.transpose(),
                    *eps,
                );
                send(*input, ga.transpose());
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::filled(r, c, g.item()));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let mut ga = Tensor::zeros(g.rows(), ca);
                let mut gb = Tensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::GatherRows { table, ids } => {
                let (r, c) = val(*table).shape();
                let mut gt = Tensor::zeros(r, c);
                for (row, &id) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(row)) {
                        *o += v;
                    }
                }
                send(*table, gt);
            }
            Op::SliceRow(a, row) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                ga.row_mut(*row).copy_from_slice(g.data());
                send(*a, ga);
            }
            Op::StackRows(items) => {
                let mut offset = 0;
                for &v in items {
                    let (r, c) = val(v).shape();
                    if wants(v) {
                        let part = g.data()[offset * c..(offset + r) * c].to_vec();
                        send(v, Tensor::from_vec(r, c, part)?);
                    }
                    offset += r;
                }
            }
            Op::Grid { items } => {
                for (&v, &gv) in items.iter().zip(g.data()) {
                    send(v, Tensor::scalar(gv));
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let parts = op.backward(&values, &node.value, g);
                if parts.len() != inputs.len() {
                    return Err(Error::Tape(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        parts.len(),
                        inputs.len()
                    )));
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    if part.shape() != val(v).shape() {
                        return Err(Error::shape(op.name(), part.shape(), val(v).shape()));
                    }
                    send(v, part);
                }
            }
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("normalization eps must be positive, got {eps}")))
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(t.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(t),
    }
}

/// Gradient of `y = x / max(‖x‖, eps)` per row.
fn normalize_rows_grad(x: &Tensor, y: &Tensor, g: &Tensor, eps: f64) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let norm = crate::tensor::dot(xr, xr).sqrt();
        let gr = g.row(r);
        if norm > eps {
            let inner = crate::tensor::dot(gr, y.row(r));
            for ((o, &gv), &yv) in out.row_mut(r).iter_mut().zip(gr).zip(y.row(r)) {
                *o = (gv - yv * inner) / norm;
            }
        } else {
            for (o, &gv) in out.row_mut(r).iter_mut().zip(gr) {
                *o = gv / eps;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NORM_EPS;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::filled(2, 3, 0.7));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
        // a fresh forward pass re-arms the tape
        let loss2 = tape.scale(x, 2.0);
        assert_eq!(tape.backward(loss2).unwrap().get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn unreached_leaves_get_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::filled(1, 2, 1.0));
        let unused = tape.param(Tensor::filled(3, 1, 1.0));
        let c = tape.constant(Tensor::filled(1, 2, 5.0));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().shape(), (3, 1));
        assert!(g.get(unused).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get(c).is_none());
    }

    #[test]
    fn records_in_topological_order() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::filled(2, 2, 0.5));
        let b = tape.tanh(a);
        let c = tape.matmul(a, b).unwrap();
        for v in [a, b, c] {
            assert!(tape.inputs(v).iter().all(|i| i.index() < v.index()));
        }
        assert_eq!(tape.op_name(c), "matmul");
    }

    #[test]
    fn zero_row_normalization_stays_finite() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(1, 3));
        let y = tape.l2_normalize_rows(x, NORM_EPS).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().is_finite());
        assert!(tape.l2_normalize_rows(x, 0.0).is_err());
    }

    #[test]
    fn relu_arguments_are_listed() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[-1.0, 2.0]]).unwrap());
        let t = tape.tanh(x);
        tape.relu(x);
        tape.relu(t);
        let args: Vec<&Tensor> = tape.relu_inputs().collect();
        assert_eq!(args.len(), 2);
        assert_eq!(args[0].data(), &[-1.0, 2.0]);
    }
}
