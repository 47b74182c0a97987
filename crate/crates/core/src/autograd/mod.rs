//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it executes. Leaves are created with
//! [`Graph::param`] (gradient wanted) or [`Graph::constant`]; every op returns a
//! [`Var`] handle. [`Graph::backward`] walks the tape once in reverse creation
//! order and accumulates gradients into the `requires_grad` leaves.
//!
//! Storage is flat row-major with no strided views: `transpose`, `permute`
//! and `reshape` copy. GELU uses the tanh approximation.

pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

/// Layer-norm epsilon used by the models.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tanh-approximated GELU on a scalar, exposed for reference checks.
pub fn gelu_scalar(x: f64) -> f64 {
    kernels::gelu(x)
}

#[cfg(test)]
mod tests;
