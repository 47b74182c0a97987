use crate::autograd::Tensor;
use crate::{Error, Result};

fn check(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// SR-STE gradient delivered to the dense weights:
/// `grad_masked + λ_W · (1 − mask) ⊙ w`.
///
/// `grad_masked` is the gradient with respect to the masked weights
/// `w ⊙ mask`; the straight-through estimator passes it to every dense
/// position unchanged, and the refining term pulls pruned weights toward zero.
pub fn refined_gradient(w: &Tensor, grad_masked: &Tensor, binary_mask: &Tensor, lambda_w: f64) -> Result<Tensor> {
    check("sr_ste", w, grad_masked)?;
    check("sr_ste", w, binary_mask)?;
    let data = w
        .data()
        .iter()
        .zip(grad_masked.data())
        .zip(binary_mask.data())
        .map(|((&w, &g), &b)| g + lambda_w * (1.0 - b) * w)
        .collect();
    Ok(Tensor::from_parts(w.shape().to_vec(), data))
}

/// One plain gradient-descent step on the dense weights using the refined
/// gradient: `w − lr · refined_gradient(..)`.
pub fn sr_ste_update(
    w: &Tensor,
    grad_masked: &Tensor,
    binary_mask: &Tensor,
    lambda_w: f64,
    lr: f64,
) -> Result<Tensor> {
    let g = refined_gradient(w, grad_masked, binary_mask, lambda_w)?;
    Ok(Tensor::from_parts(
        w.shape().to_vec(),
        w.data().iter().zip(g.data()).map(|(w, g)| w - lr * g).collect(),
    ))
}
