//! Reverse-mode automatic differentiation over the tensor kernels.
//!
//! A [`Graph`] is built per evaluation (define-by-run): leaves are named
//! parameters or constants, interior nodes record which primitive produced
//! them. Building a node only checks shapes; [`Graph::forward`] evaluates
//! every node in creation order and [`Graph::backward`] walks them in
//! reverse, accumulating vector-Jacobian products into the parents.

mod check;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::{self, Tensor, TensorError};

pub use check::{grad_check, GradCheckReport, ParamCheck, ParamStatus, DEFAULT_STEP, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("loss node must have shape [1], found {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called before forward")]
    NotForwarded,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    Conv2d { input: NodeId, kernels: NodeId, bias: Option<NodeId> },
    Affine { input: NodeId, weight: NodeId, bias: NodeId },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    Hadamard(NodeId, NodeId),
    Add(NodeId, NodeId),
    GlobalAvgPool(NodeId),
    AvgPool2d(NodeId, usize),
    SquaredError { pred: NodeId, target: NodeId },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::Affine { .. } => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Abs(_) => "abs",
            Op::Hadamard(..) => "hadamard",
            Op::Add(..) => "add",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::AvgPool2d(..) => "avg_pool2d",
            Op::SquaredError { .. } => "squared_error",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Named parameter gradients, ordered by name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    forwarded: bool,
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

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Option<Tensor>, requires_grad: bool) -> NodeId {
        self.forwarded = false;
        self.nodes.push(Node { op, shape, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, op: Op, shape: Vec<usize>, parents: &[NodeId]) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, shape, None, rg)
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId, AutodiffError> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = self.push(Op::Param, value.shape().to_vec(), Some(value), true);
        self.params.push((name, id));
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value.shape().to_vec(), Some(value), false)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// The primitive that produced `id`.
    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    /// Evaluated value of a node; `None` for interior nodes before forward.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn param_value(&self, name: &str) -> Option<&Tensor> {
        self.param_id(name).and_then(|id| self.value(id))
    }

    fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    /// Replaces a parameter's value; the graph must be forwarded again.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let id = self.param_id(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        let node = &mut self.nodes[id.0];
        if node.shape != value.shape() {
            return Err(AutodiffError::ParamShape {
                name: name.to_string(),
                expected: node.shape.clone(),
                found: value.shape().to_vec(),
            });
        }
        node.value = Some(value);
        self.forwarded = false;
        Ok(())
    }

    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: Option<NodeId>) -> Result<NodeId, TensorError> {
        let shape = tensor::conv2d_shape(self.shape(input), self.shape(kernels), bias.map(|b| self.shape(b)))?;
        let mut parents = vec![input, kernels];
        parents.extend(bias);
        Ok(self.derived(Op::Conv2d { input, kernels, bias }, shape, &parents))
    }

    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let shape = tensor::affine_shape(self.shape(input), self.shape(weight), self.shape(bias))?;
        Ok(self.derived(Op::Affine { input, weight, bias }, shape, &[input, weight, bias]))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.derived(Op::Sigmoid(x), shape, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.derived(Op::Tanh(x), shape, &[x])
    }

    /// Elementwise `|x|`; the gradient at 0 is taken as 0.
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.derived(Op::Abs(x), shape, &[x])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        tensor::same_shape_dims("hadamard", self.shape(a), self.shape(b))?;
        let shape = self.shape(a).to_vec();
        Ok(self.derived(Op::Hadamard(a, b), shape, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        tensor::same_shape_dims("add", self.shape(a), self.shape(b))?;
        let shape = self.shape(a).to_vec();
        Ok(self.derived(Op::Add(a, b), shape, &[a, b]))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let shape = tensor::global_avg_pool_shape(self.shape(x))?;
        Ok(self.derived(Op::GlobalAvgPool(x), shape, &[x]))
    }

    pub fn avg_pool2d(&mut self, x: NodeId, factor: usize) -> Result<NodeId, TensorError> {
        let shape = tensor::avg_pool2d_shape(self.shape(x), factor)?;
        Ok(self.derived(Op::AvgPool2d(x, factor), shape, &[x]))
    }

    /// `mean((pred − target)²)` as a `[1]` node.
    pub fn squared_error(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        tensor::same_shape_dims("squared_error", self.shape(pred), self.shape(target))?;
        Ok(self.derived(Op::SquaredError { pred, target }, vec![1], &[pred, target]))
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.as_ref().expect("parents are evaluated before children")
    }

    fn evaluate(&self, i: usize) -> Result<Tensor, TensorError> {
        Ok(match &self.nodes[i].op {
            Op::Param | Op::Constant => unreachable!("leaves carry values"),
            Op::Conv2d { input, kernels, bias } => {
                tensor::conv2d(self.val(*input), self.val(*kernels), bias.map(|b| self.val(b)))?
            }
            Op::Affine { input, weight, bias } => tensor::affine(self.val(*input), self.val(*weight), self.val(*bias))?,
            Op::Sigmoid(x) => tensor::map_sigmoid(self.val(*x)),
            Op::Tanh(x) => tensor::map_tanh(self.val(*x)),
            Op::Abs(x) => self.val(*x).map(f64::abs),
            Op::Hadamard(a, b) => tensor::hadamard(self.val(*a), self.val(*b))?,
            Op::Add(a, b) => tensor::add(self.val(*a), self.val(*b))?,
            Op::GlobalAvgPool(x) => tensor::global_avg_pool(self.val(*x))?,
            Op::AvgPool2d(x, f) => tensor::avg_pool2d(self.val(*x), *f)?,
            Op::SquaredError { pred, target } => {
                let (p, t) = (self.val(*pred).values(), self.val(*target).values());
                let sse = p.iter().zip(t).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
                Tensor::scalar(sse / p.len() as f64)
            }
        })
    }

    /// Evaluates every node and returns the value of the last one, which
    /// must be a `[1]` loss.
    pub fn forward(&mut self) -> Result<f64, AutodiffError> {
        let last = self.nodes.last().ok_or(AutodiffError::EmptyGraph)?;
        if last.shape != [1] {
            return Err(AutodiffError::NonScalarLoss { shape: last.shape.clone() });
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Param | Op::Constant) {
                continue;
            }
            let v = self.evaluate(i)?;
            self.nodes[i].value = Some(v);
        }
        self.forwarded = true;
        Ok(self.nodes.last().and_then(|n| n.value.as_ref()).map(|v| v.values()[0]).unwrap_or_default())
    }

    /// Gradient of the loss (the last node) with respect to every registered
    /// parameter. Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self) -> Result<Gradients, AutodiffError> {
        if !self.forwarded {
            return Err(AutodiffError::NotForwarded);
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let out = self.nodes[i].value.as_ref().expect("forwarded");
            match &self.nodes[i].op {
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::Constant => {}
                Op::Conv2d { input, kernels, bias } => {
                    let (gin, gk) = tensor::conv2d_backward(
                        self.val(*input),
                        self.val(*kernels),
                        &g,
                        self.needs(*input),
                        self.needs(*kernels),
                    );
                    if let Some(gin) = gin {
                        accumulate(&mut grads, *input, gin);
                    }
                    if let Some(gk) = gk {
                        accumulate(&mut grads, *kernels, gk);
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        let plane = g.shape()[1] * g.shape()[2];
                        let gb = g.values().chunks_exact(plane).map(|ch| ch.iter().fold(0.0, |a, &v| a + v)).collect();
                        accumulate(&mut grads, b, Tensor::from_vec(gb));
                    }
                }
                Op::Affine { input, weight, bias } => {
                    let x = self.val(*input);
                    let w = self.val(*weight);
                    let cols = x.len();
                    if self.needs(*input) {
                        let mut gx = vec![0.0; cols];
                        for (row, &gi) in w.values().chunks_exact(cols).zip(g.values()) {
                            for (d, &wv) in gx.iter_mut().zip(row) {
                                *d += gi * wv;
                            }
                        }
                        accumulate(&mut grads, *input, Tensor::new(x.shape(), gx)?);
                    }
                    if self.needs(*weight) {
                        let gw = g.values().iter().flat_map(|&gi| x.values().iter().map(move |&xv| gi * xv)).collect();
                        accumulate(&mut grads, *weight, Tensor::new(w.shape(), gw)?);
                    }
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, g.clone());
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, out, |gi, y| gi * y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = zip_map(&g, out, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Abs(x) => {
                    let gx = zip_map(&g, self.val(*x), |gi, v| {
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Hadamard(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, tensor::hadamard(&g, self.val(*b))?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, tensor::hadamard(&g, self.val(*a))?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let shape = &self.nodes[x.0].shape;
                    let plane = shape[1] * shape[2];
                    let gx = g.values().iter().flat_map(|&gi| std::iter::repeat_n(gi / plane as f64, plane)).collect();
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                }
                Op::AvgPool2d(x, f) => {
                    let gx = tensor::avg_pool2d_backward(&self.nodes[x.0].shape, *f, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SquaredError { pred, target } => {
                    let (p, t) = (self.val(*pred), self.val(*target));
                    let scale = 2.0 * g.values()[0] / p.len() as f64;
                    let diff = zip_map(p, t, |a, b| scale * (a - b));
                    if self.needs(*target) {
                        accumulate(&mut grads, *target, diff.map(|v| -v));
                    }
                    if self.needs(*pred) {
                        accumulate(&mut grads, *pred, diff);
                    }
                }
            }
        }
        Ok(self
            .params
            .iter()
            .map(|(name, id)| {
                let g = grads[id.0].take().unwrap_or_else(|| Tensor::zeros(&self.nodes[id.0].shape));
                (name.clone(), g)
            })
            .collect())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let v = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), v).expect("shapes checked at build time")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.values_mut().iter_mut().zip(g.values()).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}
