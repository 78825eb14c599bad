//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] is an append-only list of nodes in topological order: every
//! operation only references nodes that were already recorded. Scalars are
//! `1×1` matrices. [`Tape::backward`] walks the list once in reverse and
//! accumulates vector-Jacobian products into each parent.

use super::kernels::{lse_unchecked, softmax};
use super::linalg::{dot, norm, Matrix};
use super::{NumericsError, DEGENERATE_NORM};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation. Parents always have smaller indices than the node
/// holding the op.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// `a · b`
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulBt(NodeId, NodeId),
    /// `a + 1·bias` with `bias` of shape `1×cols`.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    /// Each row divided by its L2 norm.
    NormalizeRows(NodeId),
    GatherRows(NodeId, Vec<usize>),
    /// Row-wise dot product, `m×n, m×n -> m×1`.
    RowDot(NodeId, NodeId),
    /// Flattens every input (row-major) into one column vector.
    Concat(Vec<NodeId>),
    /// Picks flat entries into a column vector.
    Select(NodeId, Vec<usize>),
    /// One log-sum-exp per group of flat entries, `-> groups×1`.
    GroupLogSumExp(NodeId, Vec<Vec<usize>>),
    /// Sum of all entries, `-> 1×1`.
    Sum(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::RowDot(..) => "row_dot",
            Op::Concat(..) => "concat",
            Op::Select(..) => "select",
            Op::GroupLogSumExp(..) => "group_lse",
            Op::Sum(..) => "sum",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::RowDot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::NormalizeRows(a)
            | Op::GatherRows(a, _)
            | Op::Select(a, _)
            | Op::GroupLogSumExp(a, _)
            | Op::Sum(a) => vec![*a],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.as_slice()[0]
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId, NumericsError> {
        for p in op.parents() {
            if p.0 >= self.nodes.len() {
                return Err(NumericsError::IndexOutOfRange {
                    index: p.0,
                    len: self.nodes.len(),
                });
            }
        }
        let value = eval(&op, |id| &self.nodes[id.0].value)?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::MatMulBt(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        self.push(Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Gelu(a))
    }

    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::NormalizeRows(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId, NumericsError> {
        self.push(Op::GatherRows(a, rows))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::RowDot(a, b))
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId, NumericsError> {
        self.push(Op::Concat(parts))
    }

    pub fn select(&mut self, a: NodeId, entries: Vec<usize>) -> Result<NodeId, NumericsError> {
        self.push(Op::Select(a, entries))
    }

    pub fn group_lse(&mut self, a: NodeId, groups: Vec<Vec<usize>>) -> Result<NodeId, NumericsError> {
        self.push(Op::GroupLogSumExp(a, groups))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Sum(a))
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>, NumericsError> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => eval(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Propagates `d output / d node` to every node recorded before `output`.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, NumericsError> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(NumericsError::NonScalarOutput { shape: out.shape() });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_bt(val(b)).expect("recorded shapes");
                let gb = val(a).matmul_at(g).expect("recorded shapes");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulBt(a, b) => {
                let ga = g.matmul(val(b)).expect("recorded shapes");
                let gb = g.matmul_at(val(a)).expect("recorded shapes");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(a, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(b), |x, y| x * y);
                let gb = zip_map(g, val(a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::Gelu(a) => {
                let ga = zip_map(g, val(a), |gx, x| gx * gelu_grad(x));
                accumulate(grads, *a, ga);
            }
            Op::NormalizeRows(a) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = norm(x.row(r));
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj = dot(y, gr);
                    for ((o, yi), gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = (gi - yi * proj) / n;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, rows) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (r, &src) in rows.iter().enumerate() {
                    for (o, gi) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += gi;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowDot(a, b) => {
                let (xa, xb) = (val(a), val(b));
                let mut ga = Matrix::zeros(xa.rows(), xa.cols());
                let mut gb = Matrix::zeros(xb.rows(), xb.cols());
                for r in 0..xa.rows() {
                    let gr = g.get(r, 0);
                    for (o, v) in ga.row_mut(r).iter_mut().zip(xb.row(r)) {
                        *o = gr * v;
                    }
                    for (o, v) in gb.row_mut(r).iter_mut().zip(xa.row(r)) {
                        *o = gr * v;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = val(p).shape();
                    let n = r * c;
                    let slice = g.as_slice()[offset..offset + n].to_vec();
                    accumulate(grads, *p, Matrix::from_raw(r, c, slice));
                    offset += n;
                }
            }
            Op::Select(a, entries) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (t, &e) in entries.iter().enumerate() {
                    ga.as_mut_slice()[e] += g.as_slice()[t];
                }
                accumulate(grads, *a, ga);
            }
            Op::GroupLogSumExp(a, groups) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (gi, group) in groups.iter().enumerate() {
                    let vals: Vec<f64> = group.iter().map(|&e| x.as_slice()[e]).collect();
                    let w = softmax(&vals);
                    let up = g.as_slice()[gi];
                    for (&e, wi) in group.iter().zip(w) {
                        ga.as_mut_slice()[e] += up * wi;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                let s = g.as_slice()[0];
                accumulate(grads, *a, Matrix::from_raw(r, c, vec![s; r * c]));
            }
        }
    }
}

/// Gradients of one scalar output with respect to every recorded node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `id`; nodes the output does not depend on get exact zeros
    /// of the node's shape.
    pub fn get(&self, tape: &Tape, id: NodeId) -> Matrix {
        match self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(id).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn try_get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn same_shape(a: &Matrix, b: &Matrix) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    Ok(())
}

fn eval<'a>(op: &Op, val: impl Fn(&NodeId) -> &'a Matrix) -> Result<Matrix, NumericsError> {
    let out = match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => val(a).matmul(val(b))?,
        Op::MatMulBt(a, b) => val(a).matmul_bt(val(b))?,
        Op::AddRow(a, bias) => {
            let (x, b) = (val(a), val(bias));
            if b.shape() != (1, x.cols()) {
                return Err(NumericsError::ShapeMismatch {
                    expected: (1, x.cols()),
                    found: b.shape(),
                });
            }
            let mut out = x.clone();
            for r in 0..out.rows() {
                for (o, bi) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                    *o += bi;
                }
            }
            out
        }
        Op::Add(a, b) => {
            same_shape(val(a), val(b))?;
            zip_map(val(a), val(b), |x, y| x + y)
        }
        Op::Sub(a, b) => {
            same_shape(val(a), val(b))?;
            zip_map(val(a), val(b), |x, y| x - y)
        }
        Op::Mul(a, b) => {
            same_shape(val(a), val(b))?;
            zip_map(val(a), val(b), |x, y| x * y)
        }
        Op::Scale(a, c) => val(a).map(|x| x * c),
        Op::Gelu(a) => val(a).map(gelu),
        Op::NormalizeRows(a) => {
            let x = val(a);
            let mut out = x.clone();
            for r in 0..x.rows() {
                let n = norm(x.row(r));
                if n < DEGENERATE_NORM {
                    return Err(NumericsError::DegenerateVector);
                }
                for o in out.row_mut(r) {
                    *o /= n;
                }
            }
            out
        }
        Op::GatherRows(a, rows) => {
            let x = val(a);
            if rows.is_empty() {
                return Err(NumericsError::EmptyInput);
            }
            let mut data = Vec::with_capacity(rows.len() * x.cols());
            for &r in rows {
                if r >= x.rows() {
                    return Err(NumericsError::IndexOutOfRange {
                        index: r,
                        len: x.rows(),
                    });
                }
                data.extend_from_slice(x.row(r));
            }
            Matrix::from_raw(rows.len(), x.cols(), data)
        }
        Op::RowDot(a, b) => {
            let (x, y) = (val(a), val(b));
            same_shape(x, y)?;
            let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
            Matrix::from_raw(x.rows(), 1, data)
        }
        Op::Concat(parts) => {
            if parts.is_empty() {
                return Err(NumericsError::EmptyInput);
            }
            let data: Vec<f64> = parts
                .iter()
                .flat_map(|p| val(p).as_slice().iter().copied())
                .collect();
            Matrix::from_raw(data.len(), 1, data)
        }
        Op::Select(a, entries) => {
            let x = val(a).as_slice();
            if entries.is_empty() {
                return Err(NumericsError::EmptyInput);
            }
            let mut data = Vec::with_capacity(entries.len());
            for &e in entries {
                data.push(*x.get(e).ok_or(NumericsError::IndexOutOfRange {
                    index: e,
                    len: x.len(),
                })?);
            }
            Matrix::from_raw(data.len(), 1, data)
        }
        Op::GroupLogSumExp(a, groups) => {
            let x = val(a).as_slice();
            if groups.is_empty() {
                return Err(NumericsError::EmptyInput);
            }
            let mut data = Vec::with_capacity(groups.len());
            for group in groups {
                if group.is_empty() {
                    return Err(NumericsError::EmptyInput);
                }
                if let Some(&e) = group.iter().find(|&&e| e >= x.len()) {
                    return Err(NumericsError::IndexOutOfRange {
                        index: e,
                        len: x.len(),
                    });
                }
                data.push(lse_unchecked(group.iter().map(|&e| x[e])));
            }
            Matrix::from_raw(data.len(), 1, data)
        }
        Op::Sum(a) => Matrix::scalar(val(a).sum()),
    };
    if !out.is_finite() {
        return Err(NumericsError::NonFinite { index: 0 });
    }
    Ok(out)
}
