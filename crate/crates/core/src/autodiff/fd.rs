//! Central finite differences evaluated in `f64`, used as an independent
//! check on [`Graph::backward`]. The recorded graph structure is re-run by a
//! separate double-precision interpreter, never by the `f32` kernels.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, NodeId, Op};

#[derive(Debug, Clone)]
struct Value64 {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Value64 {
    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }
    fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }
}

/// One finite-difference estimate. `kink` is set when a `relu` or `clamp`
/// switched branches between the two probes, where the estimate is invalid.
#[derive(Debug, Clone, Copy)]
pub struct FdEstimate {
    pub value: f64,
    pub kink: bool,
}

pub struct FiniteDiff<'g> {
    graph: &'g Graph,
    base: Vec<Value64>,
}

impl<'g> FiniteDiff<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        let mut base: Vec<Value64> = Vec::with_capacity(graph.len());
        for (i, node) in graph.nodes().iter().enumerate() {
            let v = match &node.op {
                Op::Leaf(_) => leaf64(&node.value),
                op => eval64(&base, op),
            };
            debug_assert_eq!(base.len(), i);
            base.push(v);
        }
        Self { graph, base }
    }

    /// Loss value of the unperturbed graph in `f64`.
    pub fn base_value(&self, loss: NodeId) -> f64 {
        self.base[loss.index()].data[0]
    }

    fn run(&self, loss: NodeId, leaf: NodeId, index: usize, delta: f64) -> (f64, Vec<Vec<bool>>) {
        let nodes = self.graph.nodes();
        let mut affected = vec![false; loss.index() + 1];
        affected[leaf.index()] = true;
        let mut vals: Vec<Option<Value64>> = vec![None; loss.index() + 1];
        let mut leaf_val = self.base[leaf.index()].clone();
        leaf_val.data[index] += delta;
        vals[leaf.index()] = Some(leaf_val);
        let mut sides = Vec::new();
        for i in leaf.index() + 1..=loss.index() {
            let op = &nodes[i].op;
            if !op.inputs().iter().any(|x| affected[x.index()]) {
                continue;
            }
            affected[i] = true;
            let get = |id: NodeId| vals[id.index()].as_ref().unwrap_or(&self.base[id.index()]);
            match op {
                Op::Relu(a) => sides.push(get(*a).data.iter().map(|&x| x > 0.0).collect()),
                Op::Clamp(a, lo, hi) => sides.push(
                    get(*a)
                        .data
                        .iter()
                        .map(|&x| x >= *lo as f64 && x <= *hi as f64)
                        .collect(),
                ),
                _ => {}
            }
            let r = eval64_with(&get, op);
            vals[i] = Some(r);
        }
        let out = vals[loss.index()]
            .as_ref()
            .unwrap_or(&self.base[loss.index()])
            .data[0];
        (out, sides)
    }

    /// `(f(x+h) - f(x-h)) / 2h` for one component of `leaf`.
    pub fn component(&self, loss: NodeId, leaf: NodeId, index: usize, h: f64) -> Result<FdEstimate> {
        if h <= 0.0 {
            return Err(invalid("finite-difference step must be positive"));
        }
        if self.base[loss.index()].data.len() != 1 {
            return Err(invalid("finite differences need a scalar loss"));
        }
        if index >= self.base[leaf.index()].data.len() {
            return Err(invalid("component index out of range"));
        }
        let (fp, sp) = self.run(loss, leaf, index, h);
        let (fm, sm) = self.run(loss, leaf, index, -h);
        Ok(FdEstimate {
            value: (fp - fm) / (2.0 * h),
            kink: sp != sm,
        })
    }
}

/// Finite-difference gradient of scalar `loss` with respect to every
/// component of `leaf`.
pub fn finite_difference_gradient(graph: &Graph, loss: NodeId, leaf: NodeId, h: f64) -> Result<Tensor> {
    let fd = FiniteDiff::new(graph);
    let shape = graph.value(leaf).shape().to_vec();
    let n = graph.value(leaf).len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(fd.component(loss, leaf, i, h)?.value as f32);
    }
    Tensor::new(shape, out)
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero components
/// from dividing round-off by round-off.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn leaf64(t: &Tensor) -> Value64 {
    Value64 {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&x| x as f64).collect(),
    }
}

fn eval64(base: &[Value64], op: &Op) -> Value64 {
    eval64_with(&|id: NodeId| &base[id.index()], op)
}

fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn eval64_with<'a>(get: &dyn Fn(NodeId) -> &'a Value64, op: &Op) -> Value64 {
    let v = |id: usize| get(NodeId(id));
    let map = |a: &NodeId, f: &dyn Fn(f64) -> f64| Value64 {
        shape: v(a.index()).shape.clone(),
        data: v(a.index()).data.iter().map(|&x| f(x)).collect(),
    };
    let zip = |a: &NodeId, b: &NodeId, f: &dyn Fn(f64, f64) -> f64| Value64 {
        shape: v(a.index()).shape.clone(),
        data: v(a.index())
            .data
            .iter()
            .zip(&v(b.index()).data)
            .map(|(&x, &y)| f(x, y))
            .collect(),
    };
    match op {
        Op::Leaf(_) => unreachable!(),
        Op::MatMul(a, b) => {
            let (av, bv) = (v(a.index()), v(b.index()));
            let (n, k, m) = (av.shape[0], av.shape[1], bv.shape[1]);
            let mut data = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += av.data[i * k + p] * bv.data[p * m + j];
                    }
                    data[i * m + j] = s;
                }
            }
            Value64 { shape: vec![n, m], data }
        }
        Op::Add(a, b) => zip(a, b, &|x, y| x + y),
        Op::Sub(a, b) => zip(a, b, &|x, y| x - y),
        Op::Mul(a, b) => zip(a, b, &|x, y| x * y),
        Op::Scale(a, k) => {
            let k = *k as f64;
            map(a, &|x| x * k)
        }
        Op::Concat(xs) => {
            let first = v(xs[0].index());
            let rows = first.rows();
            let total: usize = xs.iter().map(|x| v(x.index()).cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for x in xs {
                    let xv = v(x.index());
                    let c = xv.cols();
                    data.extend_from_slice(&xv.data[r * c..(r + 1) * c]);
                }
            }
            let mut shape = first.shape.clone();
            *shape.last_mut().unwrap() = total;
            Value64 { shape, data }
        }
        Op::Slice(a, s, e) => {
            let av = v(a.index());
            let c = av.cols();
            let mut data = Vec::new();
            for r in 0..av.rows() {
                data.extend_from_slice(&av.data[r * c + s..r * c + e]);
            }
            let mut shape = av.shape.clone();
            *shape.last_mut().unwrap() = e - s;
            Value64 { shape, data }
        }
        Op::Sigmoid(a) => map(a, &sigmoid64),
        Op::Tanh(a) => map(a, &f64::tanh),
        Op::Relu(a) => map(a, &|x| x.max(0.0)),
        Op::Softplus(a) => map(a, &|x| if x > 30.0 { x } else { x.exp().ln_1p() }),
        Op::Exp(a) => map(a, &f64::exp),
        Op::Log(a) => map(a, &f64::ln),
        Op::Square(a) => map(a, &|x| x * x),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo as f64, *hi as f64);
            map(a, &|x| x.clamp(lo, hi))
        }
        Op::Sum(a) => Value64 {
            shape: vec![1],
            data: vec![v(a.index()).data.iter().sum()],
        },
        Op::Mean(a) => {
            let d = &v(a.index()).data;
            Value64 {
                shape: vec![1],
                data: vec![d.iter().sum::<f64>() / d.len() as f64],
            }
        }
        Op::Broadcast(a, shape) => {
            let av = v(a.index());
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| av.data[i % av.data.len()]).collect();
            Value64 { shape: shape.clone(), data }
        }
        Op::MeanRows(a) => {
            let av = v(a.index());
            let (n, c) = (av.rows(), av.cols());
            let data = (0..c)
                .map(|j| (0..n).map(|i| av.data[i * c + j]).sum::<f64>() / n as f64)
                .collect();
            Value64 { shape: vec![1, c], data }
        }
    }
}
