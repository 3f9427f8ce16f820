use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Floor added under the square root when differentiating `pairwise_l2`.
pub const PAIRWISE_L2_FLOOR: f64 = 1e-12;

static EMPTY_STORE: ParamStore = ParamStore::new();

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Differentiable operations understood by the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    /// `[m,k]·[k,n]` or matrix-vector `[m,k]·[k]`.
    MatMul,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    /// Along the last axis, max-subtracted.
    Softmax,
    /// Along the last axis; `x - logsumexp(x)`.
    LogSoftmax,
    Sum,
    Mean,
    Concat { axis: usize },
    GatherRow { index: usize },
    Scale { factor: f64 },
    Square,
    Sqrt,
    /// Euclidean distances between the rows of two matrices.
    PairwiseL2,
    Reshape,
    /// Contiguous range of a vector.
    Slice { start: usize, len: usize },
}

#[derive(Clone, Copy, Debug)]
enum Source {
    Input,
    Param,
    Op(Primitive),
}

struct Node {
    source: Source,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run tape. Node ids are assigned in insertion order, which is
/// also a topological order.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<NodeId>>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph<'static> {
    /// A graph with no parameter store attached.
    pub fn new() -> Self {
        Graph::with_params(&EMPTY_STORE)
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(1024),
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.index()].value
    }

    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].inputs
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    fn push(&mut self, source: Source, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            source,
            inputs,
            value,
            requires_grad,
        });
        id
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        check_finite(&value, "input")?;
        Ok(self.push(Source::Input, Vec::new(), value, false))
    }

    /// Leaf that records its gradient, for tests and probes.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        check_finite(&value, "variable")?;
        Ok(self.push(Source::Input, Vec::new(), value, true))
    }

    /// Binds a parameter of the attached store as a leaf. Repeated calls
    /// return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.bound[id.index()] {
            return node;
        }
        let value = self.store.get(id).clone();
        let node = self.push(Source::Param, Vec::new(), value, true);
        self.bound[id.index()] = Some(node);
        node
    }

    /// Appends a primitive and evaluates it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let arity_ok = match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul | Primitive::PairwiseL2 => {
                inputs.len() == 2
            }
            Primitive::Concat { .. } => !inputs.is_empty(),
            Primitive::Reshape => {
                return Err(Error::Contract("reshape needs a target shape; use Graph::reshape".into()))
            }
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::Contract(format!(
                "{:?} given {} inputs",
                prim,
                inputs.len()
            )));
        }
        let value = self.forward(prim, inputs)?;
        check_finite(&value, prim_name(prim))?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.index()].requires_grad);
        Ok(self.push(Source::Op(prim), inputs.to_vec(), value, requires_grad))
    }

    /// Like [`apply`](Self::apply) with an explicit reshape target.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshaped(shape)?;
        let requires_grad = self.nodes[a.index()].requires_grad;
        Ok(self.push(Source::Op(Primitive::Reshape), vec![a], value, requires_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[a])
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::LogSoftmax, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Primitive::Concat { axis }, inputs)
    }
    pub fn gather_row(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        self.apply(Primitive::GatherRow { index }, &[table])
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale { factor }, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Square, &[a])
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sqrt, &[a])
    }
    pub fn pairwise_l2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::PairwiseL2, &[a, b])
    }
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Primitive::Slice { start, len }, &[a])
    }

    /// Stacks equally sized vectors into a `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let mut reshaped = Vec::with_capacity(rows.len());
        for &r in rows {
            let d = self.value(r).len();
            reshaped.push(self.reshape(r, &[1, d])?);
        }
        self.concat(&reshaped, 0)
    }

    /// Sum of a list of scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        match terms {
            [] => self.input(Tensor::scalar(0.0)),
            [one] => Ok(*one),
            _ => {
                let v = self.concat(terms, 0)?;
                self.sum(v)
            }
        }
    }

    fn forward(&self, prim: Primitive, inputs: &[NodeId]) -> Result<Tensor> {
        let a = self.value(inputs[0]);
        match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let b = self.value(inputs[1]);
                if !a.same_shape(b) {
                    return Err(Error::Dimension(format!(
                        "{}: {:?} vs {:?}",
                        prim_name(prim),
                        a.shape(),
                        b.shape()
                    )));
                }
                Ok(match prim {
                    Primitive::Add => a.zip_map(b, |x, y| x + y),
                    Primitive::Sub => a.zip_map(b, |x, y| x - y),
                    _ => a.zip_map(b, |x, y| x * y),
                })
            }
            Primitive::MatMul => matmul_forward(a, self.value(inputs[1])),
            Primitive::Sigmoid => Ok(a.map(sigmoid)),
            Primitive::Tanh => Ok(a.map(libm::tanh)),
            Primitive::Exp => Ok(a.map(libm::exp)),
            Primitive::Log => {
                if let Some(bad) = a.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                Ok(a.map(libm::log))
            }
            Primitive::Softmax => {
                let mut out = a.clone();
                let c = a.cols();
                for row in out.data_mut().chunks_mut(c.max(1)) {
                    softmax_in_place(row);
                }
                Ok(out)
            }
            Primitive::LogSoftmax => {
                let mut out = a.clone();
                let c = a.cols();
                for row in out.data_mut().chunks_mut(c.max(1)) {
                    let lse = log_sum_exp(row);
                    for v in row.iter_mut() {
                        *v -= lse;
                    }
                }
                Ok(out)
            }
            Primitive::Sum => Ok(Tensor::scalar(a.data().iter().sum())),
            Primitive::Mean => {
                if a.is_empty() {
                    return Err(Error::Dimension("mean of empty tensor".into()));
                }
                Ok(Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64))
            }
            Primitive::Concat { axis } => {
                let parts: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                concat_forward(&parts, axis)
            }
            Primitive::GatherRow { index } => {
                if a.rank() != 2 {
                    return Err(Error::Dimension(format!(
                        "gather_row needs a matrix, got {:?}",
                        a.shape()
                    )));
                }
                if index >= a.shape()[0] {
                    return Err(Error::Dimension(format!(
                        "row {index} out of range for {:?}",
                        a.shape()
                    )));
                }
                Ok(Tensor::vector(a.row(index).to_vec()))
            }
            Primitive::Scale { factor } => Ok(a.map(|v| v * factor)),
            Primitive::Square => Ok(a.map(|v| v * v)),
            Primitive::Sqrt => {
                if let Some(bad) = a.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("sqrt of non-positive value {bad}")));
                }
                Ok(a.map(libm::sqrt))
            }
            Primitive::PairwiseL2 => pairwise_forward(a, self.value(inputs[1])),
            Primitive::Reshape => Ok(a.clone()),
            Primitive::Slice { start, len } => {
                if a.rank() != 1 || start + len > a.len() {
                    return Err(Error::Dimension(format!(
                        "slice [{start}, {}) of {:?}",
                        start + len,
                        a.shape()
                    )));
                }
                Ok(Tensor::vector(a.data()[start..start + len].to_vec()))
            }
        }
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.index() + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index()] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            let Source::Op(prim) = node.source else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(prim, node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            nodes: grads,
            bound: self.bound.clone(),
        })
    }

    fn propagate(&self, prim: Primitive, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let ins = &node.inputs;
        let y = &node.value;
        let needs = |i: usize| self.nodes[ins[i].index()].requires_grad;
        let val = |i: usize| &self.nodes[ins[i].index()].value;
        match prim {
            Primitive::Add => {
                if needs(0) {
                    accumulate(grads, ins[0], g.clone());
                }
                if needs(1) {
                    accumulate(grads, ins[1], g.clone());
                }
            }
            Primitive::Sub => {
                if needs(0) {
                    accumulate(grads, ins[0], g.clone());
                }
                if needs(1) {
                    accumulate(grads, ins[1], g.map(|v| -v));
                }
            }
            Primitive::Mul => {
                if needs(0) {
                    accumulate(grads, ins[0], g.zip_map(val(1), |a, b| a * b));
                }
                if needs(1) {
                    accumulate(grads, ins[1], g.zip_map(val(0), |a, b| a * b));
                }
            }
            Primitive::MatMul => {
                let (a, b) = (val(0), val(1));
                let m = a.shape()[0];
                let k = a.shape()[1];
                if b.rank() == 1 {
                    if needs(0) {
                        let mut ga = Tensor::zeros(a.shape());
                        let gd = ga.data_mut();
                        for i in 0..m {
                            let gi = g.data()[i];
                            for j in 0..k {
                                gd[i * k + j] = gi * b.data()[j];
                            }
                        }
                        accumulate(grads, ins[0], ga);
                    }
                    if needs(1) {
                        let mut gb = Tensor::zeros(b.shape());
                        let gd = gb.data_mut();
                        for i in 0..m {
                            let gi = g.data()[i];
                            let row = a.row(i);
                            for j in 0..k {
                                gd[j] += row[j] * gi;
                            }
                        }
                        accumulate(grads, ins[1], gb);
                    }
                } else {
                    let nn = b.shape()[1];
                    if needs(0) {
                        // g[m,n] · bᵀ[n,k]
                        let mut ga = Tensor::zeros(a.shape());
                        let gd = ga.data_mut();
                        for i in 0..m {
                            for j in 0..k {
                                let mut s = 0.0;
                                for c in 0..nn {
                                    s += g.data()[i * nn + c] * b.data()[j * nn + c];
                                }
                                gd[i * k + j] = s;
                            }
                        }
                        accumulate(grads, ins[0], ga);
                    }
                    if needs(1) {
                        // aᵀ[k,m] · g[m,n]
                        let mut gb = Tensor::zeros(b.shape());
                        let gd = gb.data_mut();
                        for i in 0..m {
                            for j in 0..k {
                                let aij = a.data()[i * k + j];
                                for c in 0..nn {
                                    gd[j * nn + c] += aij * g.data()[i * nn + c];
                                }
                            }
                        }
                        accumulate(grads, ins[1], gb);
                    }
                }
            }
            Primitive::Sigmoid => accumulate(grads, ins[0], g.zip_map(y, |g, s| g * s * (1.0 - s))),
            Primitive::Tanh => accumulate(grads, ins[0], g.zip_map(y, |g, t| g * (1.0 - t * t))),
            Primitive::Exp => accumulate(grads, ins[0], g.zip_map(y, |g, e| g * e)),
            Primitive::Log => accumulate(grads, ins[0], g.zip_map(val(0), |g, x| g / x)),
            Primitive::Softmax => {
                let c = y.cols().max(1);
                let mut gx = Tensor::zeros(y.shape());
                for ((gr, yr), out) in g
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(gx.data_mut().chunks_mut(c))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Primitive::LogSoftmax => {
                let c = y.cols().max(1);
                let mut gx = Tensor::zeros(y.shape());
                for ((gr, yr), out) in g
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(gx.data_mut().chunks_mut(c))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, &gv), &lv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gv - libm::exp(lv) * total;
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Primitive::Sum => {
                let gv = g.data()[0];
                accumulate(grads, ins[0], Tensor::filled(val(0).shape(), gv));
            }
            Primitive::Mean => {
                let a = val(0);
                let gv = g.data()[0] / a.len() as f64;
                accumulate(grads, ins[0], Tensor::filled(a.shape(), gv));
            }
            Primitive::Concat { axis } => {
                let parts: Vec<&Tensor> = ins.iter().map(|&i| self.value(i)).collect();
                let pieces = concat_split(g, &parts, axis);
                for (i, piece) in pieces.into_iter().enumerate() {
                    if needs(i) {
                        accumulate(grads, ins[i], piece);
                    }
                }
            }
            Primitive::GatherRow { index } => {
                let a = val(0);
                let mut ga = Tensor::zeros(a.shape());
                let c = a.cols();
                ga.data_mut()[index * c..(index + 1) * c].copy_from_slice(g.data());
                accumulate(grads, ins[0], ga);
            }
            Primitive::Scale { factor } => accumulate(grads, ins[0], g.map(|v| v * factor)),
            Primitive::Square => accumulate(grads, ins[0], g.zip_map(val(0), |g, x| 2.0 * g * x)),
            Primitive::Sqrt => accumulate(grads, ins[0], g.zip_map(y, |g, s| g / (2.0 * s))),
            Primitive::PairwiseL2 => {
                let (a, b) = (val(0), val(1));
                let (ga, gb) = pairwise_backward(a, b, g);
                if needs(0) {
                    accumulate(grads, ins[0], ga);
                }
                if needs(1) {
                    accumulate(grads, ins[1], gb);
                }
            }
            Primitive::Reshape => {
                let shape = val(0).shape().to_vec();
                let mut gr = g.clone();
                gr = Tensor::new(shape, gr.into_data()).expect("reshape preserves length");
                accumulate(grads, ins[0], gr);
            }
            Primitive::Slice { start, len } => {
                let mut ga = Tensor::zeros(val(0).shape());
                ga.data_mut()[start..start + len].copy_from_slice(g.data());
                accumulate(grads, ins[0], ga);
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    bound: Vec<Option<NodeId>>,
}

impl Gradients {
    /// Gradient at any node reached by the sweep.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, `None` when the parameter was not used.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.bound
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|n| self.node(n))
    }

    /// Moves out the gradients of parameters `0..count`, in id order.
    pub fn into_param_grads(mut self, count: usize) -> Vec<Option<Tensor>> {
        (0..count)
            .map(|i| {
                let node = self.bound.get(i).copied().flatten()?;
                self.nodes[node.index()].take()
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.index()] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn prim_name(p: Primitive) -> &'static str {
    match p {
        Primitive::Add => "add",
        Primitive::Sub => "sub",
        Primitive::Mul => "mul",
        Primitive::MatMul => "matmul",
        Primitive::Sigmoid => "sigmoid",
        Primitive::Tanh => "tanh",
        Primitive::Exp => "exp",
        Primitive::Log => "log",
        Primitive::Softmax => "softmax",
        Primitive::LogSoftmax => "log_softmax",
        Primitive::Sum => "sum",
        Primitive::Mean => "mean",
        Primitive::Concat { .. } => "concat",
        Primitive::GatherRow { .. } => "gather_row",
        Primitive::Scale { .. } => "scale",
        Primitive::Square => "square",
        Primitive::Sqrt => "sqrt",
        Primitive::PairwiseL2 => "pairwise_l2",
        Primitive::Reshape => "reshape",
        Primitive::Slice { .. } => "slice",
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(s)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || !(b.rank() == 1 || b.rank() == 2) || a.shape()[1] != b.shape()[0] {
        return Err(Error::Dimension(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    if b.rank() == 1 {
        let x = b.data();
        let out = (0..m)
            .map(|i| a.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect();
        return Ok(Tensor::vector(out));
    }
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..k {
            let aij = a.data()[i * k + j];
            let brow = &b.data()[j * n..(j + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aij * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn concat_forward(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let max_rank = parts.iter().map(|t| t.rank()).max().unwrap_or(0);
    if max_rank <= 1 {
        if axis != 0 {
            return Err(Error::Dimension(format!("concat axis {axis} on vectors")));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        return Ok(Tensor::vector(data));
    }
    if parts.iter().any(|t| t.rank() != 2) {
        return Err(Error::Dimension("concat of mixed ranks".into()));
    }
    match axis {
        0 => {
            let cols = parts[0].shape()[1];
            if parts.iter().any(|t| t.shape()[1] != cols) {
                return Err(Error::Dimension("concat axis 0: column mismatch".into()));
            }
            let rows = parts.iter().map(|t| t.shape()[0]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for p in parts {
                data.extend_from_slice(p.data());
            }
            Tensor::matrix(rows, cols, data)
        }
        1 => {
            let rows = parts[0].shape()[0];
            if parts.iter().any(|t| t.shape()[0] != rows) {
                return Err(Error::Dimension("concat axis 1: row mismatch".into()));
            }
            let cols: usize = parts.iter().map(|t| t.shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Tensor::matrix(rows, cols, data)
        }
        _ => Err(Error::Dimension(format!("concat axis {axis} on matrices"))),
    }
}

fn concat_split(g: &Tensor, parts: &[&Tensor], axis: usize) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(parts.len());
    if axis == 0 {
        let mut offset = 0;
        for p in parts {
            let n = p.len();
            let t = Tensor::new(p.shape().to_vec(), g.data()[offset..offset + n].to_vec())
                .expect("slice matches part shape");
            out.push(t);
            offset += n;
        }
    } else {
        let rows = g.shape()[0];
        let total = g.shape()[1];
        let mut col0 = 0;
        for p in parts {
            let c = p.shape()[1];
            let mut data = Vec::with_capacity(rows * c);
            for r in 0..rows {
                data.extend_from_slice(&g.data()[r * total + col0..r * total + col0 + c]);
            }
            out.push(Tensor::matrix(rows, c, data).expect("split shape"));
            col0 += c;
        }
    }
    out
}

fn pairwise_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::Dimension(format!(
            "pairwise_l2 {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, m) = (a.shape()[0], b.shape()[0]);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let u: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            out.push(libm::sqrt(u));
        }
    }
    Tensor::matrix(n, m, out)
}

fn pairwise_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (n, m, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..n {
        for j in 0..m {
            let (ar, br) = (a.row(i), b.row(j));
            let u: f64 = ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum();
            let coef = g.data()[i * m + j] / libm::sqrt(u + PAIRWISE_L2_FLOOR);
            for c in 0..d {
                let diff = coef * (ar[c] - br[c]);
                ga.data_mut()[i * d + c] += diff;
                gb.data_mut()[j * d + c] -= diff;
            }
        }
    }
    (ga, gb)
}
