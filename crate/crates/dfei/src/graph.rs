//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Graph`] records one forward pass as a sequence of nodes; every op
//! computes its value eagerly and remembers just enough context for the
//! backward sweep. Gradients are propagated in reverse insertion order,
//! which is a valid topological order for a tape.
//!
//! Parameters enter the graph as named leaves; [`compute_gradients`] returns
//! one gradient per stored parameter, with exact zeros for parameters that
//! never reached the loss.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Probability clamp used by the cross-entropy op before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Leaf with no gradient (inputs, bank vectors, frozen values).
    Constant,
    /// Named trainable leaf.
    Param(String),
    /// a @ b
    MatMul(NodeId, NodeId),
    /// a @ b^T
    MatMulNt(NodeId, NodeId),
    /// x [m,n] + row vector b [n]
    AddBias(NodeId, NodeId),
    /// Elementwise sum, identical shapes.
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    /// Mean over the batch (row) axis: [m,n] -> [n].
    MeanRows(NodeId),
    /// [n] -> [m,n] by repeating the vector as every row.
    BroadcastRow(NodeId),
    /// Row lookup: out[i] = table[ids[i]].
    Gather { table: NodeId, ids: Vec<usize> },
    /// Inverted-scaling dropout; the mask already contains 0 or 1/(1-rate).
    Dropout { x: NodeId, mask: Vec<f64> },
    Reshape(NodeId),
    /// Scalar sum of squares.
    SquareSum(NodeId),
    /// Mean binary cross-entropy against fixed labels, with probability
    /// clamping to [PROB_EPS, 1 - PROB_EPS].
    BceMean { probs: NodeId, labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// A single forward pass recorded for differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Insert a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Constant)
    }

    /// Insert a named trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push(value, true, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    /// a @ b^T, with b stored row-major as [n, k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MatMulNt(a, b)))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).shape() != [n] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match activation [{m},{n}]",
                self.value(b).shape()
            )));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..m {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let rg = self.needs_grad(&[x, b]);
        Ok(self.push(out, rg, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add over different shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_scaled(self.value(b), 1.0);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| c * v);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(sigmoid_scalar);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::Sigmoid(x))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).dims2()?;
        if n == 0 {
            return Err(Error::Argument("softmax over zero columns".into()));
        }
        let mut out = self.value(x).clone();
        for i in 0..m {
            softmax_in_place(out.row_mut(i));
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(out, rg, Op::SoftmaxRows(x)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of zero tensors".into()));
        }
        let (m, _) = self.value(parts[0]).dims2()?;
        let mut total = 0;
        for &p in parts {
            let (mp, np) = self.value(p).dims2()?;
            if mp != m {
                return Err(Error::Shape(format!(
                    "concat row counts differ: {m} vs {mp}"
                )));
            }
            total += np;
        }
        let mut out = vec![0.0; m * total];
        for i in 0..m {
            let dest = &mut out[i * total..(i + 1) * total];
            let mut off = 0;
            for &p in parts {
                let row = self.value(p).row(i);
                dest[off..off + row.len()].copy_from_slice(row);
                off += row.len();
            }
        }
        let value = Tensor::from_vec(&[m, total], out)?;
        let rg = self.needs_grad(parts);
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).mean_rows()?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::MeanRows(x)))
    }

    pub fn broadcast_row(&mut self, v: NodeId, rows: usize) -> Result<NodeId> {
        let shape = self.value(v).shape();
        if shape.len() != 1 {
            return Err(Error::Shape(format!(
                "broadcast_row expects a vector, got shape {shape:?}"
            )));
        }
        let n = shape[0];
        let src = self.value(v).data().to_vec();
        let mut out = vec![0.0; rows * n];
        for i in 0..rows {
            out[i * n..(i + 1) * n].copy_from_slice(&src);
        }
        let value = Tensor::from_vec(&[rows, n], out)?;
        let rg = self.nodes[v.0].requires_grad;
        Ok(self.push(value, rg, Op::BroadcastRow(v)))
    }

    /// Embedding-style row lookup. Ids must be in range for the table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Argument(format!(
                "gather id {bad} out of range for table with {rows} rows"
            )));
        }
        let mut out = vec![0.0; ids.len() * cols];
        for (i, &id) in ids.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(self.value(table).row(id));
        }
        let value = Tensor::from_vec(&[ids.len(), cols], out)?;
        let rg = self.nodes[table.0].requires_grad;
        Ok(self.push(
            value,
            rg,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Training-mode dropout with inverted scaling: kept activations are
    /// multiplied by 1/(1-rate) so the expectation matches eval mode.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut impl rand::Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut value = self.value(x).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Dropout { x, mask }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = Tensor::from_vec(shape, self.value(x).data().to_vec())?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Scalar sum of squared entries, for L2 regularization terms.
    pub fn square_sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).square_sum());
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::SquareSum(x))
    }

    /// Mean binary cross-entropy of predicted probabilities against 0/1
    /// labels. Probabilities are clamped to [PROB_EPS, 1-PROB_EPS] before
    /// the logs.
    pub fn bce_mean(&mut self, probs: NodeId, labels: &[f64]) -> Result<NodeId> {
        let p = self.value(probs);
        if p.shape() != [labels.len()] {
            return Err(Error::Argument(format!(
                "predictions have shape {:?} but there are {} labels",
                p.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Argument("cross-entropy over an empty batch".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Argument(format!("label {bad} is not binary")));
        }
        let n = labels.len() as f64;
        let mut total = 0.0;
        for (&pi, &yi) in p.data().iter().zip(labels) {
            let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
        }
        let value = Tensor::scalar(total / n);
        let rg = self.nodes[probs.0].requires_grad;
        Ok(self.push(
            value,
            rg,
            Op::BceMean {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a finite scalar loss. Returns gradients for every
    /// parameter leaf that lies on a path to the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Argument(format!(
                "backward expects a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.all_finite() {
            return Err(Error::Numeric(format!(
                "loss is not finite: {}",
                loss_value.item()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(loss_value.shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Constant | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
        }

        let mut by_param = IndexMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = grads[id].take() {
                    // The same parameter may appear as several leaves.
                    match by_param.entry(name.clone()) {
                        indexmap::map::Entry::Occupied(mut e) => {
                            let t: &mut Tensor = e.get_mut();
                            t.add_scaled(&g, 1.0);
                        }
                        indexmap::map::Entry::Vacant(e) => {
                            e.insert(g);
                        }
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor| {
            match &mut grads[target.0] {
                Some(t) => t.add_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        let wants = |target: NodeId| self.nodes[target.0].requires_grad;

        match &self.nodes[id].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.matmul_nt(self.value(*b))?);
                }
                if wants(*b) {
                    acc(grads, *b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.matmul(self.value(*b))?);
                }
                if wants(*b) {
                    acc(grads, *b, g.matmul_tn(self.value(*a))?);
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, column_sums(g)?);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    acc(grads, *x, g.map(|v| c * v));
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let mut dx = g.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = &self.nodes[id].value;
                    let mut dx = g.clone();
                    for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= yv * (1.0 - yv);
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let y = &self.nodes[id].value;
                    let (m, n) = y.dims2()?;
                    let mut dx = Tensor::zeros(y.shape());
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let dr = dx.row_mut(i);
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, _) = self.nodes[id].value.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let (_, np) = self.value(p).dims2()?;
                    if wants(p) {
                        let mut dp = Tensor::zeros(self.value(p).shape());
                        for i in 0..m {
                            let src = &g.row(i)[off..off + np];
                            dp.row_mut(i).copy_from_slice(src);
                        }
                        acc(grads, p, dp);
                    }
                    off += np;
                }
            }
            Op::MeanRows(x) => {
                if wants(*x) {
                    let (m, n) = self.value(*x).dims2()?;
                    let inv = 1.0 / m as f64;
                    let mut dx = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        for (d, &gv) in dx.row_mut(i).iter_mut().zip(g.data()) {
                            *d = gv * inv;
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::BroadcastRow(v) => {
                if wants(*v) {
                    acc(grads, *v, column_sums(g)?);
                }
            }
            Op::Gather { table, ids } => {
                if wants(*table) {
                    let mut dt = Tensor::zeros(self.value(*table).shape());
                    let cols = dt.shape()[1];
                    for (i, &idx) in ids.iter().enumerate() {
                        let src = g.row(i);
                        let dst = &mut dt.data_mut()[idx * cols..(idx + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    acc(grads, *table, dt);
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    let mut dx = g.clone();
                    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    let dx = Tensor::from_vec(self.value(*x).shape(), g.data().to_vec())?;
                    acc(grads, *x, dx);
                }
            }
            Op::SquareSum(x) => {
                if wants(*x) {
                    let c = 2.0 * g.item();
                    acc(grads, *x, self.value(*x).map(|v| c * v));
                }
            }
            Op::BceMean { probs, labels } => {
                if wants(*probs) {
                    let scale = g.item() / labels.len() as f64;
                    let p = self.value(*probs);
                    let mut dp = Tensor::zeros(p.shape());
                    for ((d, &pi), &yi) in dp.data_mut().iter_mut().zip(p.data()).zip(labels) {
                        // Outside the clamp interval the loss is locally flat.
                        if pi > PROB_EPS && pi < 1.0 - PROB_EPS {
                            *d = scale * (pi - yi) / (pi * (1.0 - pi));
                        }
                    }
                    acc(grads, *probs, dp);
                }
            }
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name, as produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.by_param.insert(name, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_param.iter()
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// One gradient tensor per parameter in the store. Parameters that do not
/// reach the loss receive exact-zero tensors; the domain feature bank is not
/// a parameter and never appears here.
pub fn compute_gradients(
    graph: &Graph,
    loss: NodeId,
    params: &ParamStore,
) -> Result<Gradients> {
    let mut grads = graph.backward(loss)?;
    for (name, param) in params.iter() {
        if grads.get(name).is_none() {
            grads.insert(name.clone(), Tensor::zeros(param.value.shape()));
        }
    }
    Ok(grads)
}

fn column_sums(g: &Tensor) -> Result<Tensor> {
    let (m, n) = g.dims2()?;
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::from_vec(&[n], out)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over one slice, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    debug_assert!(!row.is_empty());
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
