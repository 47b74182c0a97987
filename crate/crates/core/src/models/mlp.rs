use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{linear, trunc_normal, Classifier, LayerGroup, Param, INIT_STD};
use crate::autograd::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Stack of linear layers with GELU between them. Every layer except the
/// output layer is sparsifiable (group [`LayerGroup::Hidden`]).
#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<Param>,
}

/// `dims[0]` is the flattened input width, `dims.last()` the class count.
pub fn build_mlp(dims: &[usize], seed: u64) -> Result<Mlp> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "mlp dims need at least two positive entries, got {dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let mut params = Vec::with_capacity(2 * (dims.len() - 1));
    for (i, pair) in dims.windows(2).enumerate() {
        let group = (i < last).then_some(LayerGroup::Hidden);
        params.push(Param::weight(
            format!("layers.{i}.weight"),
            trunc_normal(&[pair[0], pair[1]], INIT_STD, &mut rng),
            group,
        ));
        params.push(Param::bias(format!("layers.{i}.bias"), Tensor::zeros(&[pair[1]])));
    }
    Ok(Mlp {
        dims: dims.to_vec(),
        params,
    })
}

impl Mlp {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
}

impl Classifier for Mlp {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Any input whose trailing dimensions flatten to `dims[0]` is accepted.
    fn forward(&self, g: &mut Graph, weights: &[Var], inputs: &Tensor) -> Result<Var> {
        let batch = inputs.shape().first().copied().unwrap_or(1);
        if inputs.len() != batch * self.dims[0] {
            return Err(Error::Shape {
                op: "mlp_input",
                lhs: inputs.shape().to_vec(),
                rhs: vec![batch, self.dims[0]],
            });
        }
        let x = g.constant(inputs.clone());
        let mut h = g.reshape(x, &[batch, self.dims[0]])?;
        let layers = self.dims.len() - 1;
        for i in 0..layers {
            h = linear(g, h, weights[2 * i], weights[2 * i + 1])?;
            if i + 1 < layers {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }
}
