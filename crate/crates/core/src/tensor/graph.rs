//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation on a [`Graph`] evaluates eagerly and caches its value on
//! the new node, so the forward pass is complete as soon as the root node is
//! built. [`Graph::backward`] then sweeps the nodes in reverse insertion
//! order, which is a valid reverse topological order because a node can only
//! reference nodes created before it.
//!
//! Leaves hold their values behind an [`Arc`], so model weights can be shared
//! by any number of graphs without copying or mutation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::gemm;
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Softmax(usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor },
    Reshape(usize),
    Concat(usize, usize),
    Sum(usize),
    Mean(usize),
    Column(usize, usize),
    RowMax { input: usize, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![0, 0],
        }),
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

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.push_arc(op, Arc::new(value), requires_grad)
    }

    fn push_arc(&mut self, op: Op, value: Arc<Tensor>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::ForeignNode(id.index));
        }
        Ok(id.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn grad_of(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Leaf that gradients can be requested for.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf sharing an existing tensor (typically a model weight).
    pub fn shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> NodeId {
        self.push_arc(Op::Leaf, value, requires_grad)
    }

    /// Cached forward value of `id`.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        let i = self.idx(id)?;
        Ok(self.val(i))
    }

    /// Cached forward value of the root; every intermediate value is cached
    /// on its own node.
    pub fn forward(&self, root: NodeId) -> Result<Tensor> {
        self.value(root).cloned()
    }

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.val(ia).check_same_shape(op, self.val(ib))?;
        Ok((ia, ib))
    }

    /// `[m,k] × [k,n] → [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = rank2("matmul", self.val(ia))?;
        let (k2, n) = rank2("matmul", self.val(ib))?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.val(ia).shape().to_vec(),
                right: self.val(ib).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(ia).data(), false, self.val(ib).data(), false, 0.0, &mut out);
        let rg = self.grad_of(ia) || self.grad_of(ib);
        Ok(self.push(Op::MatMul(ia, ib), Tensor::new(vec![m, n], out)?, rg))
    }

    /// Adds a length-`n` bias to every row of `[m,n]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (_, n) = rank2("add_bias", self.val(ix))?;
        if self.val(ib).shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.val(ix).shape().to_vec(),
                right: self.val(ib).shape().to_vec(),
            });
        }
        let b = self.val(ib).data();
        let mut out = self.val(ix).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.grad_of(ix) || self.grad_of(ib);
        Ok(self.push(Op::AddBias(ix, ib), out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = self.binary_same_shape("add", a, b)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x + y)?;
        let rg = self.grad_of(ia) || self.grad_of(ib);
        Ok(self.push(Op::Add(ia, ib), out, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = self.binary_same_shape("sub", a, b)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x - y)?;
        let rg = self.grad_of(ia) || self.grad_of(ib);
        Ok(self.push(Op::Sub(ia, ib), out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = self.binary_same_shape("mul", a, b)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x * y)?;
        let rg = self.grad_of(ia) || self.grad_of(ib);
        Ok(self.push(Op::Mul(ia, ib), out, rg))
    }

    pub fn scale(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).scale(alpha);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Scale(ia, alpha), out, rg))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|v| v + c);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::AddScalar(ia), out, rg))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(relu);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Relu(ia), out, rg))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(f64::tanh);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Tanh(ia), out, rg))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(sigmoid);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Sigmoid(ia), out, rg))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(softplus);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Softplus(ia), out, rg))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = softmax_rows(self.val(ia));
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Softmax(ia), out, rg))
    }

    /// Mean over rows of `-ln softmax(logits)[label]`; output shape `[1]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let il = self.idx(logits)?;
        let x = self.val(il);
        let (rows, cols) = (x.rows(), x.cols());
        if labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: x.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: bad,
                len: cols,
            });
        }
        let mut loss = 0.0;
        for (row, &label) in x.data().chunks(cols).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        let probs = softmax_rows(x);
        let rg = self.grad_of(il);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss / rows as f64),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = self.val(ia).reshape(shape)?;
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Reshape(ia), out, rg))
    }

    /// Joins two `[m,·]` matrices along columns.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ma, na) = rank2("concat", self.val(ia))?;
        let (mb, nb) = rank2("concat", self.val(ib))?;
        if ma != mb {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: self.val(ia).shape().to_vec(),
                right: self.val(ib).shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            out.extend_from_slice(self.val(ia).row_slice(r));
            out.extend_from_slice(self.val(ib).row_slice(r));
        }
        let rg = self.grad_of(ia) || self.grad_of(ib);
        Ok(self.push(Op::Concat(ia, ib), Tensor::new(vec![ma, na + nb], out)?, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.val(ia).sum());
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Sum(ia), out, rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Mean(ia), out, rg))
    }

    /// Column `j` of `[m,n]` as `[m,1]`.
    pub fn column(&mut self, a: NodeId, j: usize) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let (m, n) = rank2("column", self.val(ia))?;
        if j >= n {
            return Err(Error::IndexOutOfRange {
                op: "column",
                index: j,
                len: n,
            });
        }
        let data = (0..m).map(|r| self.val(ia).row_slice(r)[j]).collect();
        let rg = self.grad_of(ia);
        Ok(self.push(Op::Column(ia, j), Tensor::new(vec![m, 1], data)?, rg))
    }

    /// Row-wise maximum of `[m,n]` as `[m,1]`, optionally skipping column
    /// `exclude`. Ties go to the lowest index, which also receives the gradient.
    pub fn row_max(&mut self, a: NodeId, exclude: Option<usize>) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let (m, n) = rank2("row_max", self.val(ia))?;
        let min_cols = if exclude.is_some() { 2 } else { 1 };
        if n < min_cols || exclude.is_some_and(|e| e >= n) {
            return Err(Error::IndexOutOfRange {
                op: "row_max",
                index: exclude.unwrap_or(0),
                len: n,
            });
        }
        let mut arg = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m);
        for r in 0..m {
            let row = self.val(ia).row_slice(r);
            let mut best: Option<usize> = None;
            for (j, &v) in row.iter().enumerate() {
                if Some(j) == exclude {
                    continue;
                }
                if best.map_or(true, |b| v > row[b]) {
                    best = Some(j);
                }
            }
            let b = best.expect("at least one column");
            arg.push(b);
            data.push(row[b]);
        }
        let rg = self.grad_of(ia);
        Ok(self.push(
            Op::RowMax {
                input: ia,
                argmax: arg,
            },
            Tensor::new(vec![m, 1], data)?,
            rg,
        ))
    }

    /// Gradients of the scalar `root` with respect to each leaf in `wrt`.
    ///
    /// Leaves that do not influence the root (or were created as constants)
    /// get zero gradients.
    pub fn backward(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let r = self.idx(root)?;
        if self.val(r).shape() != [1] {
            return Err(Error::NonScalarRoot(self.val(r).shape().to_vec()));
        }
        let mut targets = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let i = self.idx(w)?;
            if !matches!(self.nodes[i].op, Op::Leaf) {
                return Err(Error::NotALeaf(i));
            }
            targets.push(i);
        }

        let mut adj: Vec<Option<Tensor>> = (0..=r).map(|_| None).collect();
        adj[r] = Some(Tensor::scalar(1.0));
        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }

        Ok(targets
            .iter()
            .map(|&i| {
                if i <= r {
                    adj[i].clone()
                } else {
                    None
                }
                .unwrap_or_else(|| Tensor::zeros(self.val(i).shape()))
            })
            .collect())
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut adj[i] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.grad_of(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                    self.accumulate(adj, *a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if self.grad_of(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                    self.accumulate(adj, *b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(adj, *x, g.clone());
                if self.grad_of(*b) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(adj, *b, Tensor::vector(db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.grad_of(*a) {
                    self.accumulate(adj, *a, g.zip_map(bv, |x, y| x * y).expect("shape"));
                }
                if self.grad_of(*b) {
                    self.accumulate(adj, *b, g.zip_map(av, |x, y| x * y).expect("shape"));
                }
            }
            Op::Scale(a, alpha) => self.accumulate(adj, *a, g.scale(*alpha)),
            Op::AddScalar(a) => self.accumulate(adj, *a, g.clone()),
            Op::Relu(a) => {
                let x = self.val(*a);
                let d = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }).expect("shape");
                self.accumulate(adj, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(out, |gv, y| gv * (1.0 - y * y)).expect("shape");
                self.accumulate(adj, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, |gv, y| gv * y * (1.0 - y)).expect("shape");
                self.accumulate(adj, *a, d);
            }
            Op::Softplus(a) => {
                let x = self.val(*a);
                let d = g.zip_map(x, |gv, xv| gv * sigmoid(xv)).expect("shape");
                self.accumulate(adj, *a, d);
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for (y, gr) in out.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(y.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.accumulate(adj, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let scale = g.item() / labels.len() as f64;
                let cols = probs.cols();
                let mut d = probs.clone();
                for (row, &label) in d.data_mut().chunks_mut(cols).zip(labels) {
                    row[label] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(adj, *logits, d);
            }
            Op::Reshape(a) => {
                let shape = self.val(*a).shape().to_vec();
                self.accumulate(adj, *a, g.reshape(&shape).expect("same numel"));
            }
            Op::Concat(a, b) => {
                let (m, na) = (self.val(*a).shape()[0], self.val(*a).shape()[1]);
                let nb = self.val(*b).shape()[1];
                let mut da = Vec::with_capacity(m * na);
                let mut db = Vec::with_capacity(m * nb);
                for r in 0..m {
                    let row = g.row_slice(r);
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                self.accumulate(adj, *a, Tensor::new(vec![m, na], da).expect("shape"));
                self.accumulate(adj, *b, Tensor::new(vec![m, nb], db).expect("shape"));
            }
            Op::Sum(a) => {
                let shape = self.val(*a).shape().to_vec();
                self.accumulate(adj, *a, Tensor::full(&shape, g.item()));
            }
            Op::Mean(a) => {
                let t = self.val(*a);
                let v = g.item() / t.len() as f64;
                self.accumulate(adj, *a, Tensor::full(t.shape(), v));
            }
            Op::Column(a, j) => {
                let shape = self.val(*a).shape().to_vec();
                let n = shape[1];
                let mut d = Tensor::zeros(&shape);
                for (r, gv) in g.data().iter().enumerate() {
                    d.data_mut()[r * n + j] = *gv;
                }
                self.accumulate(adj, *a, d);
            }
            Op::RowMax { input, argmax } => {
                let shape = self.val(*input).shape().to_vec();
                let n = shape[1];
                let mut d = Tensor::zeros(&shape);
                for (r, (&j, gv)) in argmax.iter().zip(g.data()).enumerate() {
                    d.data_mut()[r * n + j] = *gv;
                }
                self.accumulate(adj, *input, d);
            }
        }
    }
}
