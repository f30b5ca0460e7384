//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation on a [`Tensor`] whose inputs require gradients records a node;
//! [`Tensor::backward`] walks the recorded graph once in reverse topological order.
//! The graph is dynamic: it lives exactly as long as the tensors that reference it.

mod conv;
mod gradcheck;
mod ops;
mod tensor;

use thiserror::Error;

pub use gradcheck::{check_gradient, gradient_error, gradients, relative_error};
pub use ops::quat_product;
pub use tensor::{grad_enabled, no_grad, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("buffer of length {len} does not fill shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("narrow(axis {axis}, start {start}, len {len}) out of range for shape {shape:?}")]
    Narrow { axis: usize, start: usize, len: usize, shape: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}: no inputs")]
    Empty(&'static str),
}

/// Scales the gradients of `params` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[&Tensor], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / (norm + 1e-12);
        for p in params {
            if let Some(mut g) = p.grad() {
                g.iter_mut().for_each(|v| *v *= s);
                p.set_grad(g);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests;
