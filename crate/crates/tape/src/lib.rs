//! Reverse-mode automatic differentiation for small 1D convolutional models.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter as
//! [`Graph::param`] leaves, inputs and frozen weights as
//! [`Graph::constant`] leaves, and [`Graph::backward`] returns gradients for
//! every leaf reachable from a scalar root.

mod gemm;
mod graph;
mod kernels;
mod tensor;

pub mod check;

pub use graph::{BatchStats, Gradients, Graph, Padding, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("shape error: {0}")]
    Shape(String),
}
