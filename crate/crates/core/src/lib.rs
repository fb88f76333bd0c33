//! ConvLSTM rainfall regression from multichannel radar sequences.
//!
//! Everything is built from scratch on `f64` tensors: same-padded
//! convolution kernels, a define-by-run reverse-mode differentiator, the
//! ConvLSTM / FC-LSTM / linear model zoo, Adam and plain gradient descent,
//! radar dataset I/O, and the training protocol with validation-based
//! model selection.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod verify;

pub use tensor::{Tensor, TensorError};
