//! N:M structured sparsity: masks, decay factors, structure schedules and the
//! SR-STE gradient refinement.
//!
//! During a decay phase the effective weight is
//! `w ⊙ (mask + δ · (1 − mask))`, where `mask` keeps the `n` largest-magnitude
//! entries of every block of `m` and `δ ∈ [0, 1]` is the decay factor. Mask
//! decay recipes shrink `δ` continuously toward zero with the target pattern
//! fixed; structure decay recipes hold `δ = 0` and walk through progressively
//! sparser patterns.

mod mask;
mod pattern;
mod recipe;
mod schedule;
mod srste;

pub use mask::{apply_decayed_mask, block_counts, compute_nm_mask, MaskState};
pub use pattern::SparsityPattern;
pub use recipe::{decay_factor, RecipeConfig, RecipeKind, DEFAULT_K_GEO, DEFAULT_LAMBDA_W};
pub use schedule::{geometric_schedule, interval_partition, stepwise_schedule};
pub use srste::{refined_gradient, sr_ste_update};
