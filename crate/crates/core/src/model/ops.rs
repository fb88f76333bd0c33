//! The handful of primitives the cells are written against, implemented
//! once for eager tensors and once for the differentiable graph, so
//! inference and training share a single transcription of the model math.

use crate::autodiff::{Graph, NodeId};
use crate::tensor::{self, Tensor, TensorError};

pub trait Ops {
    type V: Clone;

    fn shape(&self, v: &Self::V) -> Vec<usize>;
    fn zeros(&mut self, shape: &[usize]) -> Self::V;
    fn conv2d(&mut self, x: &Self::V, k: &Self::V, b: Option<&Self::V>) -> Result<Self::V, TensorError>;
    fn affine(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    fn tanh(&mut self, x: &Self::V) -> Self::V;
    fn hadamard(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn global_avg_pool(&mut self, x: &Self::V) -> Result<Self::V, TensorError>;
}

/// Immediate evaluation on [`Tensor`]s.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Ops for Eager {
    type V = Tensor;

    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn zeros(&mut self, shape: &[usize]) -> Tensor {
        Tensor::zeros(shape)
    }

    fn conv2d(&mut self, x: &Tensor, k: &Tensor, b: Option<&Tensor>) -> Result<Tensor, TensorError> {
        tensor::conv2d(x, k, b)
    }

    fn affine(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        tensor::affine(x, w, b)
    }

    fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        tensor::map_sigmoid(x)
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        tensor::map_tanh(x)
    }

    fn hadamard(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        tensor::hadamard(a, b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        tensor::add(a, b)
    }

    fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        tensor::global_avg_pool(x)
    }
}

impl Ops for Graph {
    type V = NodeId;

    fn shape(&self, v: &NodeId) -> Vec<usize> {
        Graph::shape(self, *v).to_vec()
    }

    fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    fn conv2d(&mut self, x: &NodeId, k: &NodeId, b: Option<&NodeId>) -> Result<NodeId, TensorError> {
        Graph::conv2d(self, *x, *k, b.copied())
    }

    fn affine(&mut self, x: &NodeId, w: &NodeId, b: &NodeId) -> Result<NodeId, TensorError> {
        Graph::affine(self, *x, *w, *b)
    }

    fn sigmoid(&mut self, x: &NodeId) -> NodeId {
        Graph::sigmoid(self, *x)
    }

    fn tanh(&mut self, x: &NodeId) -> NodeId {
        Graph::tanh(self, *x)
    }

    fn hadamard(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, TensorError> {
        Graph::hadamard(self, *a, *b)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, TensorError> {
        Graph::add(self, *a, *b)
    }

    fn global_avg_pool(&mut self, x: &NodeId) -> Result<NodeId, TensorError> {
        Graph::global_avg_pool(self, *x)
    }
}
