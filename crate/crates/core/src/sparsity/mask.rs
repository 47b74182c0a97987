use super::SparsityPattern;
use crate::autograd::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Split `shape` around `axis` into `(outer, len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "blocking axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Visit every block of `m` consecutive positions along `axis`, passing the
/// flat indices of the block in axis order.
fn for_each_block(
    shape: &[usize],
    axis: usize,
    m: usize,
    mut f: impl FnMut(&[usize]),
) -> Result<()> {
    let (outer, len, inner) = split_axis(shape, axis)?;
    if len % m != 0 {
        return Err(Error::Divisibility {
            layer: "<unnamed>".into(),
            axis,
            len,
            m,
        });
    }
    let mut idx = vec![0usize; m];
    for o in 0..outer {
        for block in 0..len / m {
            for i in 0..inner {
                for (t, slot) in idx.iter_mut().enumerate() {
                    *slot = (o * len + block * m + t) * inner + i;
                }
                f(&idx);
            }
        }
    }
    Ok(())
}

/// Binary magnitude mask: within every block of `pattern.m()` consecutive
/// entries along `axis`, the `pattern.n()` entries with largest `|w|` get 1.
/// Ties go to the lower index.
pub fn compute_nm_mask(w: &Tensor, pattern: SparsityPattern, axis: usize) -> Result<Tensor> {
    let (n, m) = (pattern.n(), pattern.m());
    let data = w.data();
    let mut mask = vec![0.0; data.len()];
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(m);
    for_each_block(w.shape(), axis, m, |idx| {
        if n == m {
            idx.iter().for_each(|&i| mask[i] = 1.0);
        } else if n == 1 {
            let mut best = idx[0];
            for &i in &idx[1..] {
                if data[i].abs().total_cmp(&data[best].abs()).is_gt() {
                    best = i;
                }
            }
            mask[best] = 1.0;
        } else {
            ranked.clear();
            ranked.extend(idx.iter().map(|&i| (data[i].abs(), i)));
            // stable sort keeps axis order among equal magnitudes
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            ranked[..n].iter().for_each(|&(_, i)| mask[i] = 1.0);
        }
    })?;
    Ok(Tensor::from_parts(w.shape().to_vec(), mask))
}

/// Number of nonzero entries in each block of `m` along `axis`.
pub fn block_counts(t: &Tensor, m: usize, axis: usize) -> Result<Vec<usize>> {
    let data = t.data();
    let mut counts = Vec::new();
    for_each_block(t.shape(), axis, m, |idx| {
        counts.push(idx.iter().filter(|&&i| data[i] != 0.0).count());
    })?;
    Ok(counts)
}

/// Binary mask plus decay factor for one weight tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskState {
    binary_mask: Tensor,
    decay_factor: f64,
    active_pattern: SparsityPattern,
}

impl MaskState {
    pub fn new(binary_mask: Tensor, decay_factor: f64, active_pattern: SparsityPattern) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay_factor) {
            return Err(Error::InvalidArgument(format!(
                "decay factor must lie in [0, 1], got {decay_factor}"
            )));
        }
        if binary_mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            binary_mask,
            decay_factor,
            active_pattern,
        })
    }

    /// Mask `w` by magnitude under `pattern` along `axis`.
    pub fn compute(w: &Tensor, pattern: SparsityPattern, axis: usize, decay_factor: f64) -> Result<Self> {
        Self::new(compute_nm_mask(w, pattern, axis)?, decay_factor, pattern)
    }

    pub fn binary_mask(&self) -> &Tensor {
        &self.binary_mask
    }

    pub fn decay_factor(&self) -> f64 {
        self.decay_factor
    }

    pub fn active_pattern(&self) -> SparsityPattern {
        self.active_pattern
    }

    /// Per-element multiplier `mask + δ · (1 − mask)`.
    pub fn coefficients(&self) -> Tensor {
        let d = self.decay_factor;
        self.binary_mask.map(|b| b + d * (1.0 - b))
    }
}

/// `w ⊙ (mask + δ · (1 − mask))` recorded on the tape, so the gradient reaching
/// `w` is the upstream gradient at kept positions and `δ` times it at pruned ones.
pub fn apply_decayed_mask(g: &mut Graph, w: Var, mask: &MaskState) -> Result<Var> {
    if g.shape(w) != mask.binary_mask.shape() {
        return Err(Error::Shape {
            op: "apply_decayed_mask",
            lhs: g.shape(w).to_vec(),
            rhs: mask.binary_mask.shape().to_vec(),
        });
    }
    let coef = g.constant(mask.coefficients());
    g.hadamard(w, coef)
}
