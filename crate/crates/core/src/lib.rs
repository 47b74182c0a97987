//! Decaying-based N:M structured sparsity training.
//!
//! The crate bundles everything needed to compare sparse training recipes at
//! desk scale:
//!
//! - [`autograd`]: a small reverse-mode autodiff engine over `f64` tensors.
//! - [`sparsity`]: N:M masks, mask-decay factors, structure-decay schedules and
//!   the SR-STE gradient refinement.
//! - [`models`]: a tiny transformer encoder classifier and an MLP whose
//!   projection / feed-forward weights can be sparsified.
//! - [`train`]: the dense / decay / fine-tune loop with AdamW and gradient-noise
//!   diagnostics.
//! - [`cost`]: closed-form FLOPs and parameter accounting for transformers.
//! - [`data`]: deterministic synthetic classification data.
//! - [`cli`]: the `train`, `cost` and `schedule` commands.

pub mod autograd;
pub mod cli;
pub mod cost;
pub mod data;
mod error;
pub mod models;
pub mod sparsity;
pub mod train;

pub use error::{Error, Result};
