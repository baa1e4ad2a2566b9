//! Tape-style computation graph. Nodes are evaluated eagerly as they are
//! recorded, can be re-evaluated with new leaf bindings via [`Graph::forward`],
//! and differentiated in reverse order via [`Graph::backward`].

use std::collections::HashMap;

use crate::error::{EvfError, Result};
use crate::tensor::{self, Tensor};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Leaf {
    Param(String),
    Input(String),
    Const,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf(Leaf),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    /// Concatenation along the last axis.
    Concat(Vec<NodeId>),
    /// Columns `start..end` of the last axis.
    Slice(NodeId, usize, usize),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f32, f32),
    Sum(NodeId),
    Mean(NodeId),
    /// `[m]`, `[1, m]` or scalar source repeated to the target shape.
    Broadcast(NodeId, Vec<usize>),
    /// `[n, m] -> [1, m]`, order-independent mean over rows.
    MeanRows(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Broadcast(..) => "broadcast",
            Op::MeanRows(..) => "mean_rows",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::Scale(a, _)
            | Op::Slice(a, ..)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Broadcast(a, _)
            | Op::MeanRows(a) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

/// Gradients of a scalar loss with respect to every node that influences it.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<String, NodeId>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter leaf; `None` if the loss does not depend on it.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.node(id))
    }

    /// Parameter gradients, zero-filled for parameters that were recorded but unused.
    pub fn params<'a>(&'a self, graph: &'a Graph) -> impl Iterator<Item = (&'a str, Tensor)> + 'a {
        graph.params.iter().map(move |(name, &id)| {
            let g = self
                .node(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()));
            (name.as_str(), g)
        })
    }
}

fn shape_err(op: &'static str, node: usize, detail: String) -> EvfError {
    EvfError::Shape { op, node, detail }
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

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn param_ids(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn push_leaf(&mut self, leaf: Leaf, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf(leaf),
            value,
        });
        id
    }

    /// Records a parameter leaf. Recording the same name twice returns the first node.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push_leaf(Leaf::Param(name.to_string()), value);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn param_from(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let t = store
            .get(name)
            .ok_or_else(|| EvfError::UnknownParam(name.to_string()))?;
        Ok(self.param(name, t.clone()))
    }

    pub fn input(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push_leaf(Leaf::Input(name.to_string()), value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Leaf::Const, value)
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let idx = self.nodes.len();
        let value = eval(&self.nodes, &op, idx)?;
        if !value.all_finite() {
            return Err(EvfError::NonFinite {
                op: op.name(),
                node: idx,
            });
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(idx))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: NodeId, k: f32) -> Result<NodeId> {
        self.record(Op::Scale(a, k))
    }
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.record(Op::Concat(xs.to_vec()))
    }
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.record(Op::Slice(a, start, end))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid(a))
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(a))
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Softplus(a))
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Exp(a))
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log(a))
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Square(a))
    }
    pub fn clamp(&mut self, a: NodeId, lo: f32, hi: f32) -> Result<NodeId> {
        self.record(Op::Clamp(a, lo, hi))
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean(a))
    }
    pub fn broadcast(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::Broadcast(a, shape.to_vec()))
    }
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::MeanRows(a))
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        let shape = self.value(xw).shape().to_vec();
        let bb = self.broadcast(b, &shape)?;
        self.add(xw, bb)
    }

    /// Re-evaluates every node after rebinding leaves. Keys are parameter or
    /// input names; unnamed constants keep their recorded value.
    pub fn forward(&mut self, bindings: &HashMap<String, Tensor>) -> Result<()> {
        for idx in 0..self.nodes.len() {
            let op = self.nodes[idx].op.clone();
            if let Op::Leaf(leaf) = &op {
                let name = match leaf {
                    Leaf::Param(n) | Leaf::Input(n) => n,
                    Leaf::Const => continue,
                };
                if let Some(t) = bindings.get(name) {
                    if t.shape() != self.nodes[idx].value.shape() {
                        return Err(shape_err(
                            "leaf",
                            idx,
                            format!(
                                "binding `{name}` has shape {:?}, expected {:?}",
                                t.shape(),
                                self.nodes[idx].value.shape()
                            ),
                        ));
                    }
                    self.nodes[idx].value = t.clone();
                }
                continue;
            }
            let value = eval(&self.nodes, &op, idx)?;
            if !value.all_finite() {
                return Err(EvfError::NonFinite {
                    op: op.name(),
                    node: idx,
                });
            }
            self.nodes[idx].value = value;
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`. Fan-out contributions are summed.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(EvfError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contrib) in self.local_grads(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                tensor::matmul_grad_a(g.data(), bv.data(), da.data_mut(), n, k, m);
                tensor::matmul_grad_b(av.data(), g.data(), db.data_mut(), n, k, m);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |gi, bi| gi * bi)),
                (*b, g.zip_map(val(*a), |gi, ai| gi * ai)),
            ],
            Op::Scale(a, k) => vec![(*a, g.map(|x| x * k))],
            Op::Concat(xs) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(xs.len());
                for x in xs {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut d = Vec::with_capacity(xv.len());
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    res.push((*x, Tensor::new(xv.shape().to_vec(), d).unwrap()));
                    offset += c;
                }
                res
            }
            Op::Slice(a, start, end) => {
                let av = val(*a);
                let (rows, c) = (av.rows(), av.cols());
                let w = end - start;
                let mut d = Tensor::zeros(av.shape());
                for r in 0..rows {
                    d.data_mut()[r * c + start..r * c + end]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |gi, s| gi * s * (1.0 - s)))],
            Op::Tanh(a) => vec![(*a, g.zip_map(out, |gi, t| gi * (1.0 - t * t)))],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }))],
            Op::Softplus(a) => vec![(*a, g.zip_map(val(*a), |gi, x| gi * sigmoid(x)))],
            Op::Exp(a) => vec![(*a, g.zip_map(out, |gi, e| gi * e))],
            Op::Log(a) => vec![(*a, g.zip_map(val(*a), |gi, x| gi / x))],
            Op::Square(a) => vec![(*a, g.zip_map(val(*a), |gi, x| 2.0 * gi * x))],
            Op::Clamp(a, lo, hi) => vec![(
                *a,
                g.zip_map(val(*a), |gi, x| if x >= *lo && x <= *hi { gi } else { 0.0 }),
            )],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let av = val(*a);
                vec![(*a, Tensor::full(av.shape(), g.item() / av.len() as f32))]
            }
            Op::Broadcast(a, _) => {
                let av = val(*a);
                let mut d = Tensor::zeros(av.shape());
                if av.len() == 1 {
                    d.data_mut()[0] = g.sum();
                } else {
                    let c = av.len();
                    for r in 0..g.len() / c {
                        for (di, gi) in d.data_mut().iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                            *di += *gi;
                        }
                    }
                }
                vec![(*a, d)]
            }
            Op::MeanRows(a) => {
                let av = val(*a);
                let n = av.rows();
                let inv = 1.0 / n as f32;
                let mut d = Vec::with_capacity(av.len());
                for _ in 0..n {
                    d.extend(g.data().iter().map(|x| x * inv));
                }
                vec![(*a, Tensor::new(av.shape().to_vec(), d).unwrap())]
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn same_shape(nodes: &[Node], op: &'static str, idx: usize, a: NodeId, b: NodeId) -> Result<()> {
    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
    if sa != sb {
        return Err(shape_err(op, idx, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

fn eval(nodes: &[Node], op: &Op, idx: usize) -> Result<Tensor> {
    let val = |id: NodeId| -> Result<&Tensor> {
        nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| shape_err(op.name(), idx, format!("input {} is not recorded yet", id.0)))
    };
    Ok(match op {
        Op::Leaf(_) => unreachable!("leaves are never re-evaluated"),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a)?, val(*b)?);
            if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
                return Err(shape_err(
                    "matmul",
                    idx,
                    format!("{:?} x {:?}", av.shape(), bv.shape()),
                ));
            }
            let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            Tensor::new(vec![n, m], tensor::matmul(av.data(), bv.data(), n, k, m))?
        }
        Op::Add(a, b) => {
            same_shape(nodes, "add", idx, *a, *b)?;
            val(*a)?.zip_map(val(*b)?, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            same_shape(nodes, "sub", idx, *a, *b)?;
            val(*a)?.zip_map(val(*b)?, |x, y| x - y)
        }
        Op::Mul(a, b) => {
            same_shape(nodes, "mul", idx, *a, *b)?;
            val(*a)?.zip_map(val(*b)?, |x, y| x * y)
        }
        Op::Scale(a, k) => val(*a)?.map(|x| x * k),
        Op::Concat(xs) => {
            if xs.is_empty() {
                return Err(shape_err("concat", idx, "no inputs".into()));
            }
            let first = val(xs[0])?;
            let lead = &first.shape()[..first.rank() - 1];
            let rows = first.rows();
            let mut total = 0;
            for x in xs {
                let xv = val(*x)?;
                if &xv.shape()[..xv.rank() - 1] != lead {
                    return Err(shape_err(
                        "concat",
                        idx,
                        format!("{:?} vs {:?}", first.shape(), xv.shape()),
                    ));
                }
                total += xv.cols();
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for x in xs {
                    data.extend_from_slice(val(*x)?.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(shape, data)?
        }
        Op::Slice(a, start, end) => {
            let av = val(*a)?;
            if start >= end || *end > av.cols() {
                return Err(shape_err(
                    "slice",
                    idx,
                    format!("range {start}..{end} of last axis {}", av.cols()),
                ));
            }
            let mut data = Vec::with_capacity(av.rows() * (end - start));
            for r in 0..av.rows() {
                data.extend_from_slice(&av.row(r)[*start..*end]);
            }
            let mut shape = av.shape().to_vec();
            *shape.last_mut().unwrap() = end - start;
            Tensor::new(shape, data)?
        }
        Op::Sigmoid(a) => val(*a)?.map(sigmoid),
        Op::Tanh(a) => val(*a)?.map(f32::tanh),
        Op::Relu(a) => val(*a)?.map(|x| x.max(0.0)),
        Op::Softplus(a) => val(*a)?.map(softplus),
        Op::Exp(a) => val(*a)?.map(f32::exp),
        Op::Log(a) => val(*a)?.map(f32::ln),
        Op::Square(a) => val(*a)?.map(|x| x * x),
        Op::Clamp(a, lo, hi) => val(*a)?.map(|x| x.clamp(*lo, *hi)),
        Op::Sum(a) => Tensor::scalar(val(*a)?.sum()),
        Op::Mean(a) => {
            let av = val(*a)?;
            Tensor::scalar(av.sum() / av.len() as f32)
        }
        Op::Broadcast(a, shape) => {
            let av = val(*a)?;
            let n: usize = shape.iter().product();
            if av.len() == 1 {
                Tensor::new(shape.clone(), vec![av.item(); n])?
            } else if shape.last() == Some(&av.len()) && av.rows() == 1 {
                let mut data = Vec::with_capacity(n);
                for _ in 0..n / av.len() {
                    data.extend_from_slice(av.data());
                }
                Tensor::new(shape.clone(), data)?
            } else {
                return Err(shape_err(
                    "broadcast",
                    idx,
                    format!("{:?} -> {shape:?}", av.shape()),
                ));
            }
        }
        Op::MeanRows(a) => {
            let av = val(*a)?;
            let (n, c) = (av.rows(), av.cols());
            let mut col = vec![0f32; n];
            let mut data = Vec::with_capacity(c);
            for j in 0..c {
                for (i, v) in col.iter_mut().enumerate() {
                    *v = av.data()[i * c + j];
                }
                // Sorted f64 accumulation: bit-identical under row permutation,
                // and exact for repeated rows.
                col.sort_by(|x, y| x.total_cmp(y));
                let s: f64 = col.iter().map(|&v| v as f64).sum();
                data.push((s / n as f64) as f32);
            }
            Tensor::new(vec![1, c], data)?
        }
    })
}
