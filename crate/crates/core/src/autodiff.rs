//! Reverse-mode differentiation over the small op set the auto-encoder needs.
//!
//! Values are either dense matrices (scalars are `1 × 1`) or edge-aligned
//! vectors laid out like a [`SparseGraph`]'s stored entries. Every forward op
//! checks its output for NaN/Inf. [`Tape::backward`] walks the recorded ops
//! once, newest first, and accumulates gradients additively into shared
//! inputs.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::SparseGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: expected a {expected} operand")]
    Kind {
        op: &'static str,
        expected: &'static str,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Dense(Array2<f64>),
    /// One entry per stored adjacency entry, in CSR order.
    Edge(Array1<f64>),
}

impl Value {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Value::Dense(a) => a.shape().to_vec(),
            Value::Edge(e) => vec![e.len()],
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Dense(a) => Value::Dense(Array2::zeros(a.raw_dim())),
            Value::Edge(e) => Value::Edge(Array1::zeros(e.len())),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Value::Dense(a) => a.iter().all(|v| v.is_finite()),
            Value::Edge(e) => e.iter().all(|v| v.is_finite()),
        }
    }

    fn add_assign(&mut self, other: Value) {
        match (self, other) {
            (Value::Dense(a), Value::Dense(b)) => *a += &b,
            (Value::Edge(a), Value::Edge(b)) => *a += &b,
            _ => unreachable!("gradient kinds are fixed by the forward pass"),
        }
    }

    pub fn as_dense(&self) -> Option<&Array2<f64>> {
        match self {
            Value::Dense(a) => Some(a),
            Value::Edge(_) => None,
        }
    }

    pub fn as_edge(&self) -> Option<&Array1<f64>> {
        match self {
            Value::Edge(e) => Some(e),
            Value::Dense(_) => None,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix stored by columns, used as the right operand of
/// [`Tape::matmul_sparse`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumns {
    nrows: usize,
    col_offsets: Vec<usize>,
    row_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseColumns {
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let mut col_offsets = Vec::with_capacity(dense.ncols() + 1);
        let mut row_indices = Vec::new();
        let mut values = Vec::new();
        col_offsets.push(0);
        for column in dense.columns() {
            for (r, &v) in column.iter().enumerate() {
                if v != 0.0 {
                    row_indices.push(r);
                    values.push(v);
                }
            }
            col_offsets.push(values.len());
        }
        Self {
            nrows: dense.nrows(),
            col_offsets,
            row_indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_offsets[c]..self.col_offsets[c + 1];
        self.row_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    MatMulSparse(Var, &'g SparseColumns),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    EdgeScores {
        s: Var,
        r: Var,
        graph: &'g SparseGraph,
    },
    SegmentSoftmax {
        x: Var,
        graph: &'g SparseGraph,
    },
    Aggregate {
        alpha: Var,
        v: Var,
        graph: &'g SparseGraph,
    },
    EdgeInner {
        h: Var,
        graph: &'g SparseGraph,
    },
    ColumnNormSum {
        x: Var,
        norms: Array1<f64>,
    },
    SoftplusNegSum(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<'g> {
    value: Value,
    op: Op<'g>,
    requires_grad: bool,
}

/// Records a forward computation for a single backward sweep.
#[derive(Debug, Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(
        &mut self,
        value: Value,
        op: Op<'g>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(Value::Dense(value), Op::Leaf, true, "param")
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(Value::Dense(value), Op::Leaf, false, "constant")
    }

    /// Constant edge-aligned leaf.
    pub fn edge_constant(&mut self, value: Array1<f64>) -> Result<Var> {
        self.push(Value::Edge(value), Op::Leaf, false, "edge_constant")
    }

    pub fn value(&self, var: Var) -> &Value {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn dense_of(&self, var: Var, op: &'static str) -> Result<&Array2<f64>> {
        self.nodes[var.0]
            .value
            .as_dense()
            .ok_or(AutodiffError::Kind {
                op,
                expected: "dense",
            })
    }

    fn edge_of(&self, var: Var, op: &'static str) -> Result<&Array1<f64>> {
        self.nodes[var.0]
            .value
            .as_edge()
            .ok_or(AutodiffError::Kind {
                op,
                expected: "edge-aligned",
            })
    }

    /// Dense value of `var`. Panics on an edge-aligned value.
    pub fn dense(&self, var: Var) -> &Array2<f64> {
        self.nodes[var.0].value.as_dense().expect("dense value")
    }

    /// Edge-aligned value of `var`. Panics on a dense value.
    pub fn edge(&self, var: Var) -> &Array1<f64> {
        self.nodes[var.0]
            .value
            .as_edge()
            .expect("edge-aligned value")
    }

    /// Value of a `1 × 1` tensor.
    pub fn scalar(&self, var: Var) -> f64 {
        let a = self.dense(var);
        assert_eq!(a.dim(), (1, 1), "scalar value");
        a[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.dense_of(a, "matmul")?, self.dense_of(b, "matmul")?);
        if x.ncols() != y.nrows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", x.dim(), y.dim()),
            ));
        }
        let out = x.dot(y);
        let rg = self.grad_any(&[a, b]);
        self.push(Value::Dense(out), Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · b` with `b` a constant sparse matrix; cost is `rows(a) · nnz(b)`.
    pub fn matmul_sparse(&mut self, a: Var, b: &'g SparseColumns) -> Result<Var> {
        let x = self.dense_of(a, "matmul_sparse")?;
        if x.ncols() != b.nrows() {
            return Err(shape_err(
                "matmul_sparse",
                format!("{:?} x ({}, {})", x.dim(), b.nrows(), b.ncols()),
            ));
        }
        let mut out = Array2::<f64>::zeros((x.nrows(), b.ncols()));
        Zip::from(out.rows_mut())
            .and(x.rows())
            .par_for_each(|mut out_row, x_row| {
                for c in 0..b.ncols() {
                    out_row[c] = b.column(c).map(|(r, v)| x_row[r] * v).sum();
                }
            });
        let rg = self.grad_any(&[a]);
        self.push(
            Value::Dense(out),
            Op::MatMulSparse(a, b),
            rg,
            "matmul_sparse",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self
            .dense_of(a, "transpose")?
            .t()
            .as_standard_layout()
            .into_owned();
        let rg = self.grad_any(&[a]);
        self.push(Value::Dense(out), Op::Transpose(a), rg, "transpose")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.dense_of(a, "sigmoid")?.mapv(sigmoid);
        let rg = self.grad_any(&[a]);
        self.push(Value::Dense(out), Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.dense_of(a, "tanh")?.mapv(f64::tanh);
        let rg = self.grad_any(&[a]);
        self.push(Value::Dense(out), Op::Tanh(a), rg, "tanh")
    }

    /// Elementwise activation; identity records nothing.
    pub fn activate(&mut self, a: Var, activation: Activation) -> Result<Var> {
        match activation {
            Activation::Identity => Ok(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, sign: f64) -> Result<Var> {
        let out = match (self.value(a), self.value(b)) {
            (Value::Dense(x), Value::Dense(y)) if x.dim() == y.dim() => {
                Value::Dense(x + &(y * sign))
            }
            (Value::Edge(x), Value::Edge(y)) if x.len() == y.len() => Value::Edge(x + &(y * sign)),
            (x, y) => {
                return Err(shape_err(
                    name,
                    format!("{:?} vs {:?}", x.shape(), y.shape()),
                ))
            }
        };
        let rg = self.grad_any(&[a, b]);
        let op = if sign > 0.0 {
            Op::Add(a, b)
        } else {
            Op::Sub(a, b)
        };
        self.push(out, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", -1.0)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = match self.value(a) {
            Value::Dense(x) => Value::Dense(x * factor),
            Value::Edge(x) => Value::Edge(x * factor),
        };
        let rg = self.grad_any(&[a]);
        self.push(out, Op::Scale(a, factor), rg, "scale")
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = match self.value(a) {
            Value::Dense(x) => x.sum(),
            Value::Edge(x) => x.sum(),
        };
        let rg = self.grad_any(&[a]);
        self.push(
            Value::Dense(Array2::from_elem((1, 1), total)),
            Op::Sum(a),
            rg,
            "sum",
        )
    }

    /// Per stored entry `(i, j)`: `sigmoid(s_i + r_j)`. `s` and `r` are `1 × N`.
    pub fn edge_scores(&mut self, s: Var, r: Var, graph: &'g SparseGraph) -> Result<Var> {
        let n = graph.num_nodes();
        let (sv, rv) = (
            self.dense_of(s, "edge_scores")?,
            self.dense_of(r, "edge_scores")?,
        );
        if sv.dim() != (1, n) || rv.dim() != (1, n) {
            return Err(shape_err(
                "edge_scores",
                format!("{:?}, {:?} for {n} nodes", sv.dim(), rv.dim()),
            ));
        }
        let (sv, rv) = (sv.row(0), rv.row(0));
        let out: Array1<f64> = graph
            .row_indices()
            .iter()
            .zip(graph.col_indices())
            .map(|(&i, &j)| sigmoid(sv[i] + rv[j]))
            .collect();
        let rg = self.grad_any(&[s, r]);
        self.push(
            Value::Edge(out),
            Op::EdgeScores { s, r, graph },
            rg,
            "edge_scores",
        )
    }

    /// Softmax within each CSR row, stabilized by the row maximum.
    pub fn segment_softmax(&mut self, x: Var, graph: &'g SparseGraph) -> Result<Var> {
        let scores = self.edge_of(x, "segment_softmax")?;
        if scores.len() != graph.nnz() {
            return Err(shape_err(
                "segment_softmax",
                format!("{} entries for nnz {}", scores.len(), graph.nnz()),
            ));
        }
        let mut out = Array1::<f64>::zeros(scores.len());
        let slice = out.as_slice_mut().expect("contiguous");
        for i in 0..graph.num_nodes() {
            let range = graph.row_range(i);
            let row = &mut slice[range.clone()];
            let max = range
                .clone()
                .map(|e| scores[e])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, e) in row.iter_mut().zip(range) {
                *o = (scores[e] - max).exp();
                total += *o;
            }
            row.iter_mut().for_each(|o| *o /= total);
        }
        let rg = self.grad_any(&[x]);
        self.push(
            Value::Edge(out),
            Op::SegmentSoftmax { x, graph },
            rg,
            "segment_softmax",
        )
    }

    /// Column `i` of the output is `Σ_{j ∈ N_i} alpha_ij · v[:, j]`.
    pub fn attention_aggregate(
        &mut self,
        alpha: Var,
        v: Var,
        graph: &'g SparseGraph,
    ) -> Result<Var> {
        let (a, m) = (
            self.edge_of(alpha, "attention_aggregate")?,
            self.dense_of(v, "attention_aggregate")?,
        );
        if a.len() != graph.nnz() || m.ncols() != graph.num_nodes() {
            return Err(shape_err(
                "attention_aggregate",
                format!(
                    "alpha {} / nnz {}, v {:?} / N {}",
                    a.len(),
                    graph.nnz(),
                    m.dim(),
                    graph.num_nodes()
                ),
            ));
        }
        let out = node_major(&aggregate_rows(a, &node_major(m), graph));
        let rg = self.grad_any(&[alpha, v]);
        self.push(
            Value::Dense(out),
            Op::Aggregate { alpha, v, graph },
            rg,
            "attention_aggregate",
        )
    }

    /// Per stored entry `(i, j)`: `h[:, i] · h[:, j]`.
    pub fn edge_inner_products(&mut self, h: Var, graph: &'g SparseGraph) -> Result<Var> {
        let m = self.dense_of(h, "edge_inner_products")?;
        if m.ncols() != graph.num_nodes() {
            return Err(shape_err(
                "edge_inner_products",
                format!("{:?} for {} nodes", m.dim(), graph.num_nodes()),
            ));
        }
        let nodes = node_major(m);
        let out = edge_dots(&nodes, &nodes, graph);
        let rg = self.grad_any(&[h]);
        self.push(
            Value::Edge(out),
            Op::EdgeInner { h, graph },
            rg,
            "edge_inner_products",
        )
    }

    /// `Σ_i sqrt(‖x[:, i]‖² + eps)`, as a `1 × 1` tensor.
    pub fn column_norm_sum(&mut self, x: Var, eps: f64) -> Result<Var> {
        let m = self.dense_of(x, "column_norm_sum")?;
        let norms: Array1<f64> = m
            .columns()
            .into_iter()
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() + eps).sqrt())
            .collect();
        let total = norms.sum();
        let rg = self.grad_any(&[x]);
        self.push(
            Value::Dense(Array2::from_elem((1, 1), total)),
            Op::ColumnNormSum { x, norms },
            rg,
            "column_norm_sum",
        )
    }

    /// `Σ_e softplus(−x_e) = −Σ_e log sigmoid(x_e)` over an edge-aligned input.
    pub fn softplus_neg_sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self
            .edge_of(x, "softplus_neg_sum")?
            .iter()
            .map(|&z| softplus(-z))
            .sum();
        let rg = self.grad_any(&[x]);
        self.push(
            Value::Dense(Array2::from_elem((1, 1), total)),
            Op::SoftplusNegSum(x),
            rg,
            "softplus_neg_sum",
        )
    }

    /// Propagates `d loss / d node` back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Value::Dense(Array2::ones((1, 1))));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            for (input, g) in self.input_grads(node, &grad) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(grad);
            }
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    g
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn input_grads(&self, node: &Node<'g>, grad: &Value) -> Vec<(Var, Value)> {
        let g = grad.as_dense();
        let ge = grad.as_edge();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let g = g.expect("dense grad");
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, Value::Dense(g.dot(&self.dense(*b).t()))));
                }
                if wants(*b) {
                    out.push((*b, Value::Dense(self.dense(*a).t().dot(g))));
                }
                out
            }
            Op::MatMulSparse(a, b) => {
                let g = g.expect("dense grad");
                let mut da = Array2::<f64>::zeros(self.dense(*a).raw_dim());
                Zip::from(da.rows_mut())
                    .and(g.rows())
                    .par_for_each(|mut da_row, g_row| {
                        for c in 0..b.ncols() {
                            let gc = g_row[c];
                            if gc != 0.0 {
                                for (r, v) in b.column(c) {
                                    da_row[r] += gc * v;
                                }
                            }
                        }
                    });
                vec![(*a, Value::Dense(da))]
            }
            Op::Transpose(a) => {
                vec![(
                    *a,
                    Value::Dense(g.expect("dense grad").t().as_standard_layout().into_owned()),
                )]
            }
            Op::Sigmoid(a) => {
                let y = node.value.as_dense().expect("dense");
                let mut d = g.expect("dense grad").clone();
                Zip::from(&mut d)
                    .and(y)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                vec![(*a, Value::Dense(d))]
            }
            Op::Tanh(a) => {
                let y = node.value.as_dense().expect("dense");
                let mut d = g.expect("dense grad").clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                vec![(*a, Value::Dense(d))]
            }
            Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
            Op::Sub(a, b) => {
                let neg = match grad {
                    Value::Dense(x) => Value::Dense(-x),
                    Value::Edge(x) => Value::Edge(-x),
                };
                vec![(*a, grad.clone()), (*b, neg)]
            }
            Op::Scale(a, factor) => {
                let scaled = match grad {
                    Value::Dense(x) => Value::Dense(x * *factor),
                    Value::Edge(x) => Value::Edge(x * *factor),
                };
                vec![(*a, scaled)]
            }
            Op::Sum(a) => {
                let g0 = g.expect("dense grad")[[0, 0]];
                let filled = match self.value(*a) {
                    Value::Dense(x) => Value::Dense(Array2::from_elem(x.raw_dim(), g0)),
                    Value::Edge(x) => Value::Edge(Array1::from_elem(x.len(), g0)),
                };
                vec![(*a, filled)]
            }
            Op::EdgeScores { s, r, graph } => {
                let ge = ge.expect("edge grad");
                let y = node.value.as_edge().expect("edge");
                let n = graph.num_nodes();
                let mut ds = Array2::<f64>::zeros((1, n));
                let mut dr = Array2::<f64>::zeros((1, n));
                for (e, (&i, &j)) in graph
                    .row_indices()
                    .iter()
                    .zip(graph.col_indices())
                    .enumerate()
                {
                    let d = ge[e] * y[e] * (1.0 - y[e]);
                    ds[[0, i]] += d;
                    dr[[0, j]] += d;
                }
                vec![(*s, Value::Dense(ds)), (*r, Value::Dense(dr))]
            }
            Op::SegmentSoftmax { x, graph } => {
                let ge = ge.expect("edge grad");
                let y = node.value.as_edge().expect("edge");
                let mut dx = Array1::<f64>::zeros(y.len());
                for i in 0..graph.num_nodes() {
                    let range = graph.row_range(i);
                    let dot: f64 = range.clone().map(|e| ge[e] * y[e]).sum();
                    for e in range {
                        dx[e] = y[e] * (ge[e] - dot);
                    }
                }
                vec![(*x, Value::Edge(dx))]
            }
            Op::Aggregate { alpha, v, graph } => {
                let g = g.expect("dense grad");
                let a = self.edge(*alpha);
                let m = self.dense(*v);
                let mut out = Vec::new();
                if wants(*alpha) {
                    let (g_nodes, m_nodes) = (node_major(g), node_major(m));
                    out.push((*alpha, Value::Edge(edge_dots(&g_nodes, &m_nodes, graph))));
                }
                if wants(*v) {
                    let g_nodes = node_major(g);
                    let dim = g_nodes.ncols();
                    let (src, cols) = (g_nodes.as_slice().expect("standard"), graph.col_indices());
                    let mut dv = vec![0.0; m.len()];
                    for i in 0..graph.num_nodes() {
                        let gi = &src[i * dim..(i + 1) * dim];
                        for e in graph.row_range(i) {
                            let j = cols[e] * dim;
                            axpy(a[e], gi, &mut dv[j..j + dim]);
                        }
                    }
                    let dv = Array2::from_shape_vec((m.ncols(), dim), dv).expect("sized");
                    out.push((*v, Value::Dense(node_major(&dv))));
                }
                out
            }
            Op::EdgeInner { h, graph } => {
                let ge = ge.expect("edge grad");
                let m = self.dense(*h);
                // each endpoint receives w_ij + w_ji
                let nodes = node_major(m);
                let mut sym = ge.clone();
                for (e, &t) in graph.mirror_indices().iter().enumerate() {
                    sym[e] += ge[t];
                }
                let dh = aggregate_rows(&sym, &nodes, graph);
                vec![(*h, Value::Dense(node_major(&dh)))]
            }
            Op::ColumnNormSum { x, norms } => {
                let g0 = g.expect("dense grad")[[0, 0]];
                let mut d = self.dense(*x).clone();
                for (mut col, &norm) in d.axis_iter_mut(Axis(1)).zip(norms) {
                    col.mapv_inplace(|v| g0 * v / norm);
                }
                vec![(*x, Value::Dense(d))]
            }
            Op::SoftplusNegSum(x) => {
                let g0 = g.expect("dense grad")[[0, 0]];
                let d = self.edge(*x).mapv(|z| g0 * (sigmoid(z) - 1.0));
                vec![(*x, Value::Edge(d))]
            }
        }
    }
}

/// Transposed copy in standard layout: `d × N` to `N × d` and back.
fn node_major(m: &Array2<f64>) -> Array2<f64> {
    m.t().as_standard_layout().into_owned()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Row `i` of the result is `Σ_e w_e · rows[col_e]` over row `i`'s entries;
/// `rows` is `N × d`.
fn aggregate_rows(weights: &Array1<f64>, rows: &Array2<f64>, graph: &SparseGraph) -> Array2<f64> {
    let dim = rows.ncols();
    let src = rows.as_slice().expect("standard layout");
    let cols = graph.col_indices();
    let mut out = Array2::<f64>::zeros(rows.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let row = row.as_slice_mut().expect("contiguous row");
            for e in graph.row_range(i) {
                let j = cols[e] * dim;
                axpy(weights[e], &src[j..j + dim], row);
            }
        });
    out
}

/// `out_e = a[i] · b[j]` for every stored entry, with nodes as rows.
fn edge_dots(a: &Array2<f64>, b: &Array2<f64>, graph: &SparseGraph) -> Array1<f64> {
    let dim = a.ncols();
    let (a, b) = (
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    );
    let cols = graph.col_indices();
    let mut out = Array1::<f64>::zeros(graph.nnz());
    let offsets = graph.row_offsets();
    let slice = out.as_slice_mut().expect("contiguous");
    let mut chunks = Vec::with_capacity(graph.num_nodes());
    let mut rest = slice;
    for i in 0..graph.num_nodes() {
        let (head, tail) = rest.split_at_mut(offsets[i + 1] - offsets[i]);
        chunks.push((i, head));
        rest = tail;
    }
    chunks.into_par_iter().for_each(|(i, chunk)| {
        let ai = &a[i * dim..(i + 1) * dim];
        for (o, e) in chunk.iter_mut().zip(graph.row_range(i)) {
            let j = cols[e] * dim;
            *o = dot(ai, &b[j..j + dim]);
        }
    });
    out
}

/// Gradients of trainable leaves. Leaves the loss does not reach read as
/// zeros of their own shape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, tape: &Tape<'_>, var: Var) -> Value {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| tape.value(var).zeros_like())
    }

    /// Dense gradient of a dense leaf, zero-filled when unreachable.
    pub fn dense(&self, tape: &Tape<'_>, var: Var) -> Array2<f64> {
        match self.get(tape, var) {
            Value::Dense(a) => a,
            Value::Edge(_) => panic!("edge-aligned leaf"),
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}
