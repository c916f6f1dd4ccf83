//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only list of nodes. Nodes are created in
//! topological order, so [`Graph::backward`] simply walks the tape in reverse
//! insertion order; gradient accumulation order is therefore fixed and
//! repeated runs are bit-identical.

pub mod gradcheck;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{check_op, finite_difference_check, finite_difference_check_many, ALL_OPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use kernels::{axis_split, broadcast_map, broadcast_shape, keepdim};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Constant,
    MatMul,
    Add,
    Subtract,
    Multiply,
    Exp,
    Log,
    Negate,
    Relu,
    Elu,
    Sigmoid,
    Square,
    Sqrt,
    /// Sum of all elements to a scalar.
    Sum,
    SumAxis(usize),
    MeanAxis(usize),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    LogSumExpAxis(usize),
    SoftmaxAxis(usize),
    Reshape(Vec<usize>),
    /// 2-D transpose.
    Transpose,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Scale(f64),
    /// Mean over rows of a `[k × d]` matrix with order-independent summation.
    PoolMean,
}

impl Op {
    /// Names accepted by [`Op::from_name`].
    pub const REGISTERED: &'static [&'static str] = &[
        "matmul",
        "add",
        "multiply",
        "subtract",
        "exp",
        "log",
        "negate",
        "relu",
        "elu",
        "sigmoid",
        "sum",
        "mean",
        "concat",
        "slice",
        "square",
        "logsumexp",
        "softmax",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Subtract => "subtract",
            Op::Multiply => "multiply",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Negate => "negate",
            Op::Relu => "relu",
            Op::Elu => "elu",
            Op::Sigmoid => "sigmoid",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Sum => "sum",
            Op::SumAxis(_) => "sum-axis",
            Op::MeanAxis(_) => "mean",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::LogSumExpAxis(_) => "logsumexp",
            Op::SoftmaxAxis(_) => "softmax",
            Op::Reshape(_) => "reshape",
            Op::Transpose => "transpose",
            Op::Clamp { .. } => "clamp",
            Op::Scale(_) => "scale",
            Op::PoolMean => "pool-mean",
        }
    }

    /// Resolves a registered name. Axis-taking ops use `axis`; `slice` takes
    /// `range` along it.
    pub fn from_name(name: &str, axis: usize, range: (usize, usize)) -> Result<Op> {
        Ok(match name {
            "matmul" => Op::MatMul,
            "add" => Op::Add,
            "multiply" => Op::Multiply,
            "subtract" => Op::Subtract,
            "exp" => Op::Exp,
            "log" => Op::Log,
            "negate" => Op::Negate,
            "relu" => Op::Relu,
            "elu" => Op::Elu,
            "sigmoid" => Op::Sigmoid,
            "sum" => Op::Sum,
            "mean" => Op::MeanAxis(axis),
            "concat" => Op::Concat(axis),
            "slice" => Op::Slice {
                axis,
                start: range.0,
                end: range.1,
            },
            "square" => Op::Square,
            "logsumexp" => Op::LogSumExpAxis(axis),
            "softmax" => Op::SoftmaxAxis(axis),
            other => return Err(Error::contract(format!("unknown op `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_passes: usize,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf (zero if the loss does not depend on it).
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var).expect("gradient requested for a non-leaf node")
    }
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

    /// Number of completed [`Graph::backward`] calls on this graph.
    pub fn backward_passes(&self) -> usize {
        self.backward_passes
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, vec![], true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, vec![], false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `op` to `inputs`, recording a node.
    pub fn forward_op(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = self.evaluate(&op, inputs)?;
        if !value.is_finite() {
            return Err(Error::domain(op.name(), "non-finite result"));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push(value, op, inputs.to_vec(), tracked))
    }

    fn arity(op: &Op, inputs: &[Var]) -> Result<()> {
        let expected = match op {
            Op::Leaf | Op::Constant => 0,
            Op::MatMul | Op::Add | Op::Subtract | Op::Multiply => 2,
            Op::Concat(_) => {
                if inputs.is_empty() {
                    return Err(Error::contract("concat of zero tensors"));
                }
                return Ok(());
            }
            _ => 1,
        };
        if inputs.len() != expected {
            return Err(Error::contract(format!(
                "{} expects {expected} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
        Ok(())
    }

    fn evaluate(&self, op: &Op, inputs: &[Var]) -> Result<Tensor> {
        Self::arity(op, inputs)?;
        let name = op.name();
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        match op {
            Op::Leaf | Op::Constant => Err(Error::contract("leaves are created with leaf()/constant()")),
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::dimension(name, &[a.shape(), b.shape()]));
                }
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                Tensor::new(vec![n, m], kernels::matmul(a.values(), b.values(), n, k, m))
            }
            Op::Add | Op::Subtract | Op::Multiply => {
                let (a, b) = (val(0), val(1));
                let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::dimension(name, &[a.shape(), b.shape()]))?;
                let n: usize = shape.iter().product();
                let av = kernels::gather(a.values(), &broadcast_map(a.shape(), &shape), n);
                let bv = kernels::gather(b.values(), &broadcast_map(b.shape(), &shape), n);
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add => |x, y| x + y,
                    Op::Subtract => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                Tensor::new(shape, av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect())
            }
            Op::Exp => Ok(val(0).map(f64::exp)),
            Op::Log => {
                let a = val(0);
                if let Some(x) = a.values().iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::domain(name, format!("log of non-positive value {x}")));
                }
                Ok(a.map(f64::ln))
            }
            Op::Sqrt => {
                let a = val(0);
                if let Some(x) = a.values().iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::domain(name, format!("sqrt of non-positive value {x}")));
                }
                Ok(a.map(f64::sqrt))
            }
            Op::Negate => Ok(val(0).map(|x| -x)),
            Op::Relu => Ok(val(0).map(|x| if x > 0.0 { x } else { 0.0 })),
            Op::Elu => Ok(val(0).map(|x| if x > 0.0 { x } else { x.exp_m1() })),
            Op::Sigmoid => Ok(val(0).map(sigmoid)),
            Op::Square => Ok(val(0).map(|x| x * x)),
            Op::Scale(c) => {
                let c = *c;
                Ok(val(0).map(|x| c * x))
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                Ok(val(0).map(|x| x.clamp(lo, hi)))
            }
            Op::Sum => Ok(Tensor::scalar(val(0).values().iter().sum())),
            Op::SumAxis(axis) | Op::MeanAxis(axis) | Op::LogSumExpAxis(axis) => {
                let a = val(0);
                check_axis(name, a, *axis)?;
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                if len == 0 {
                    return Err(Error::dimension(name, &[a.shape()]));
                }
                let x = a.values();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| x[(o * len + j) * inner + i];
                        out[o * inner + i] = match op {
                            Op::LogSumExpAxis(_) => {
                                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                                m + (0..len).map(|j| (at(j) - m).exp()).sum::<f64>().ln()
                            }
                            Op::MeanAxis(_) => (0..len).map(at).sum::<f64>() / len as f64,
                            _ => (0..len).map(at).sum::<f64>(),
                        };
                    }
                }
                Tensor::new(keepdim(a.shape(), *axis), out)
            }
            Op::SoftmaxAxis(axis) => {
                let a = val(0);
                check_axis(name, a, *axis)?;
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let x = a.values();
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let m = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for j in 0..len {
                            let e = (x[idx(j)] - m).exp();
                            out[idx(j)] = e;
                            z += e;
                        }
                        for j in 0..len {
                            out[idx(j)] /= z;
                        }
                    }
                }
                Tensor::new(a.shape().to_vec(), out)
            }
            Op::Concat(axis) => {
                let first = val(0);
                check_axis(name, first, *axis)?;
                let mut shape = first.shape().to_vec();
                shape[*axis] = 0;
                for i in 0..inputs.len() {
                    let t = val(i);
                    let ok = t.rank() == first.rank()
                        && t.shape()
                            .iter()
                            .zip(first.shape())
                            .enumerate()
                            .all(|(d, (x, y))| d == *axis || x == y);
                    if !ok {
                        return Err(Error::dimension(name, &[first.shape(), t.shape()]));
                    }
                    shape[*axis] += t.shape()[*axis];
                }
                let (outer, _, inner) = axis_split(&shape, *axis);
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for i in 0..inputs.len() {
                        let t = val(i);
                        let block = t.shape()[*axis] * inner;
                        out.extend_from_slice(&t.values()[o * block..(o + 1) * block]);
                    }
                }
                Tensor::new(shape, out)
            }
            Op::Slice { axis, start, end } => {
                let a = val(0);
                check_axis(name, a, *axis)?;
                if start > end || *end > a.shape()[*axis] {
                    return Err(Error::dimension(name, &[a.shape(), &[*start, *end]]));
                }
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let mut out = Vec::with_capacity(outer * (end - start) * inner);
                for o in 0..outer {
                    out.extend_from_slice(&a.values()[(o * len + start) * inner..(o * len + end) * inner]);
                }
                let mut shape = a.shape().to_vec();
                shape[*axis] = end - start;
                Tensor::new(shape, out)
            }
            Op::Reshape(shape) => {
                let a = val(0);
                if shape.iter().product::<usize>() != a.len() {
                    return Err(Error::dimension(name, &[a.shape(), shape]));
                }
                Tensor::new(shape.clone(), a.values().to_vec())
            }
            Op::Transpose => {
                let a = val(0);
                if a.rank() != 2 {
                    return Err(Error::dimension(name, &[a.shape()]));
                }
                let (r, c) = (a.shape()[0], a.shape()[1]);
                Tensor::new(vec![c, r], transpose(a.values(), r, c))
            }
            Op::PoolMean => {
                let a = val(0);
                if a.rank() != 2 || a.shape()[0] == 0 {
                    return Err(Error::dimension(name, &[a.shape()]));
                }
                let (k, d) = (a.shape()[0], a.shape()[1]);
                let x = a.values();
                let out = (0..d)
                    .map(|j| kernels::exact_sum((0..k).map(|i| x[i * d + j])) / k as f64)
                    .collect();
                Tensor::new(vec![1, d], out)
            }
        }
    }

    /// Reverse pass from a one-element `loss`. Returns gradients for every
    /// leaf reachable from the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty graph"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked || node.inputs.is_empty() {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let local = self.local_grads(id, &upstream)?;
            for (input, g) in node.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[id] = None;
            }
        }
        if let Some(bad) = grads.iter().flatten().find(|g| !g.is_finite()) {
            return Err(Error::domain("backward", format!("non-finite gradient of shape {:?}", bad.shape())));
        }
        self.backward_passes += 1;
        Ok(Gradients { grads })
    }

    /// Gradients w.r.t. each input of node `id`, given its upstream gradient.
    fn local_grads(&self, id: usize, up: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |i: usize| &self.nodes[node.inputs[i].0].value;
        let g = up.values();
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Result<Vec<Option<Tensor>>> {
            let v = (0..g.len()).map(f).collect();
            Ok(vec![Some(Tensor::new(val(0).shape().to_vec(), v)?)])
        };
        match &node.op {
            Op::Leaf | Op::Constant => Ok(vec![]),
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let da = kernels::matmul_grad_lhs(g, b.values(), n, k, m);
                let db = kernels::matmul_grad_rhs(a.values(), g, n, k, m);
                Ok(vec![Some(Tensor::new(vec![n, k], da)?), Some(Tensor::new(vec![k, m], db)?)])
            }
            Op::Add | Op::Subtract | Op::Multiply => {
                let (a, b) = (val(0), val(1));
                let ma = broadcast_map(a.shape(), out.shape());
                let mb = broadcast_map(b.shape(), out.shape());
                let (ga, gb): (Vec<f64>, Vec<f64>) = match node.op {
                    Op::Add => (g.to_vec(), g.to_vec()),
                    Op::Subtract => (g.to_vec(), g.iter().map(|x| -x).collect()),
                    _ => {
                        let n = g.len();
                        let av = kernels::gather(a.values(), &ma, n);
                        let bv = kernels::gather(b.values(), &mb, n);
                        (
                            g.iter().zip(&bv).map(|(x, y)| x * y).collect(),
                            g.iter().zip(&av).map(|(x, y)| x * y).collect(),
                        )
                    }
                };
                Ok(vec![
                    Some(Tensor::new(a.shape().to_vec(), kernels::reduce_to(&ga, a.len(), &ma))?),
                    Some(Tensor::new(b.shape().to_vec(), kernels::reduce_to(&gb, b.len(), &mb))?),
                ])
            }
            Op::Exp => elementwise(&|i| g[i] * out.values()[i]),
            Op::Log => elementwise(&|i| g[i] / val(0).values()[i]),
            Op::Sqrt => elementwise(&|i| g[i] * 0.5 / out.values()[i]),
            Op::Negate => elementwise(&|i| -g[i]),
            Op::Relu => elementwise(&|i| if val(0).values()[i] > 0.0 { g[i] } else { 0.0 }),
            Op::Elu => elementwise(&|i| {
                if val(0).values()[i] > 0.0 {
                    g[i]
                } else {
                    g[i] * (out.values()[i] + 1.0)
                }
            }),
            Op::Sigmoid => elementwise(&|i| {
                let s = out.values()[i];
                g[i] * s * (1.0 - s)
            }),
            Op::Square => elementwise(&|i| 2.0 * val(0).values()[i] * g[i]),
            Op::Scale(c) => elementwise(&|i| c * g[i]),
            Op::Clamp { lo, hi } => elementwise(&|i| {
                let x = val(0).values()[i];
                if x >= *lo && x <= *hi {
                    g[i]
                } else {
                    0.0
                }
            }),
            Op::Sum => {
                let a = val(0);
                Ok(vec![Some(Tensor::filled(a.shape(), g[0]))])
            }
            Op::SumAxis(axis) | Op::MeanAxis(axis) | Op::LogSumExpAxis(axis) | Op::SoftmaxAxis(axis) => {
                let a = val(0);
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let x = a.values();
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let r = o * inner + i;
                        match node.op {
                            Op::SumAxis(_) => (0..len).for_each(|j| dx[idx(j)] = g[r]),
                            Op::MeanAxis(_) => (0..len).for_each(|j| dx[idx(j)] = g[r] / len as f64),
                            Op::LogSumExpAxis(_) => {
                                let lse = out.values()[r];
                                (0..len).for_each(|j| dx[idx(j)] = g[r] * (x[idx(j)] - lse).exp());
                            }
                            _ => {
                                let s = out.values();
                                let dot: f64 = (0..len).map(|j| g[idx(j)] * s[idx(j)]).sum();
                                (0..len).for_each(|j| dx[idx(j)] = s[idx(j)] * (g[idx(j)] - dot));
                            }
                        }
                    }
                }
                Ok(vec![Some(Tensor::new(a.shape().to_vec(), dx)?)])
            }
            Op::Concat(axis) => {
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = node
                    .inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.nodes[v.0].value.len()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (i, part) in parts.iter_mut().enumerate() {
                        let block = val(i).shape()[*axis] * inner;
                        part.extend_from_slice(&g[offset..offset + block]);
                        offset += block;
                    }
                }
                parts
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| Tensor::new(val(i).shape().to_vec(), p).map(Some))
                    .collect()
            }
            Op::Slice { axis, start, end } => {
                let a = val(0);
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let mut dx = vec![0.0; a.len()];
                let width = (end - start) * inner;
                for o in 0..outer {
                    dx[(o * len + start) * inner..(o * len + end) * inner].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                Ok(vec![Some(Tensor::new(a.shape().to_vec(), dx)?)])
            }
            Op::Reshape(_) => Ok(vec![Some(Tensor::new(val(0).shape().to_vec(), g.to_vec())?)]),
            Op::Transpose => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                Ok(vec![Some(Tensor::new(val(0).shape().to_vec(), transpose(g, r, c))?)])
            }
            Op::PoolMean => {
                let a = val(0);
                let k = a.shape()[0];
                let dx = (0..k).flat_map(|_| g.iter().map(move |x| x / k as f64)).collect();
                Ok(vec![Some(Tensor::new(a.shape().to_vec(), dx)?)])
            }
        }
    }

    // Convenience wrappers. These are thin aliases for `forward_op`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(Op::Subtract, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(Op::Multiply, &[a, b])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Log, &[a])
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Sqrt, &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Negate, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Relu, &[a])
    }
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Elu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Sigmoid, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Square, &[a])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward_op(Op::Scale(c), &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.forward_op(Op::Clamp { lo, hi }, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Sum, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(Op::SumAxis(axis), &[a])
    }
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(Op::MeanAxis(axis), &[a])
    }
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(Op::LogSumExpAxis(axis), &[a])
    }
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(Op::SoftmaxAxis(axis), &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.forward_op(Op::Concat(axis), parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.forward_op(Op::Slice { axis, start, end }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.forward_op(Op::Reshape(shape.to_vec()), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::Transpose, &[a])
    }
    pub fn pool_mean(&mut self, a: Var) -> Result<Var> {
        self.forward_op(Op::PoolMean, &[a])
    }

    /// `x − logsumexp(x)` along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let lse = self.logsumexp(a, axis)?;
        self.sub(a, lse)
    }

    /// `x + c` for a scalar constant.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    /// Mean of all elements.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }
}

fn check_axis(op: &str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::dimension(op, &[t.shape(), &[axis]]));
    }
    Ok(())
}

fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_with_identity_is_noop() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(3));
        let a = g.leaf(t(&[3, 2], &[1.0, -2.0, 3.5, 0.25, 7.0, 8.0]));
        let c = g.matmul(i, a).unwrap();
        assert_eq!(g.value(c), g.value(a));
    }

    #[test]
    fn logsumexp_of_zeros_is_ln2() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 2], &[0.0, 0.0]));
        let y = g.logsumexp(x, 1).unwrap();
        assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).values(), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item(), 6.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(Tensor::scalar(4.0));
        let y = g.square(c).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).values(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let mut empty = Graph::new();
        assert!(matches!(empty.backward(Var(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("{other:?}"),
        }
        let c = g.leaf(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, c), Ok(_)));
        let d = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.add(a, d), Err(Error::Dimension { .. })));
    }

    #[test]
    fn log_domain() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(a), Err(Error::Domain { .. })));
        let b = g.leaf(t(&[1], &[-1.0]));
        assert!(matches!(g.log(b), Err(Error::Domain { .. })));
    }

    #[test]
    fn exp_overflow_is_a_domain_error() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_lse_dominates_max() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1000.0, 999.0, -5.0, 0.1, 0.2, 0.3]));
        let s = g.softmax(x, 1).unwrap();
        for r in 0..2 {
            let row: f64 = g.value(s).row_slice(r).iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
        let l = g.logsumexp(x, 1).unwrap();
        assert!(g.value(l).values()[0] >= 1000.0);
        assert!(g.value(l).values()[1] >= 0.3);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(t(&[2, 1], &[5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).values(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(s).values(), &[5.0, 6.0]);
        let w = g.constant(t(&[2, 1], &[1.0, 10.0]));
        let p = g.mul(s, w).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(b).values(), &[1.0, 10.0]);
        assert_eq!(grads.wrt(a).values(), &[0.0; 4]);
    }

    #[test]
    fn pool_mean_is_permutation_invariant_bitwise() {
        let rows = [[0.1, 1e10], [0.2, -3.3], [0.3, 1e-8], [0.7, -1e10]];
        let to_tensor = |order: &[usize]| {
            let v: Vec<f64> = order.iter().flat_map(|&i| rows[i]).collect();
            t(&[4, 2], &v)
        };
        let mut g = Graph::new();
        let a = g.constant(to_tensor(&[0, 1, 2, 3]));
        let b = g.constant(to_tensor(&[3, 1, 0, 2]));
        let pa = g.pool_mean(a).unwrap();
        let pb = g.pool_mean(b).unwrap();
        let bits = |v: &Tensor| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.value(pa)), bits(g.value(pb)));
    }

    #[test]
    fn from_name_covers_registered_set() {
        for name in Op::REGISTERED {
            let op = Op::from_name(name, 0, (0, 1)).unwrap();
            assert_eq!(op.name(), *name);
        }
        assert!(Op::from_name("conv2d", 0, (0, 0)).is_err());
    }
}
