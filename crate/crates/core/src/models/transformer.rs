use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{linear, trunc_normal, Classifier, LayerGroup, Param, INIT_STD};
use crate::autograd::{Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyTransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub seq_len: usize,
    /// Feature width of each input token before the patch projection.
    pub token_dim: usize,
    pub num_classes: usize,
}

impl Default for TinyTransformerConfig {
    /// Three layers, three heads, width 192.
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 3,
            embed_dim: 192,
            ff_dim: 768,
            seq_len: 8,
            token_dim: 16,
            num_classes: 10,
        }
    }
}

impl TinyTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("ff_dim", self.ff_dim),
            ("seq_len", self.seq_len),
            ("token_dim", self.token_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.embed_dim ({}) must be divisible by model.heads ({})",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Parameter count in closed form.
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.embed_dim, self.ff_dim);
        let embed = self.token_dim * d + d + self.seq_len * d;
        let per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
        embed + self.layers * per_layer + 2 * d + d * self.num_classes + self.num_classes
    }
}

/// Pre-LN transformer encoder classifier: linear token projection, learned
/// positional embedding, `layers` blocks of multi-head self-attention and
/// GELU feed-forward, final layer norm, mean pooling and a linear head.
#[derive(Clone, Debug)]
pub struct TinyTransformer {
    cfg: TinyTransformerConfig,
    params: Vec<Param>,
}

// Parameter layout per block, relative to the block's first index.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const Q_W: usize = 2;
const Q_B: usize = 3;
const K_W: usize = 4;
const K_B: usize = 5;
const V_W: usize = 6;
const V_B: usize = 7;
const O_W: usize = 8;
const O_B: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const FF1_W: usize = 12;
const FF1_B: usize = 13;
const FF2_W: usize = 14;
const FF2_B: usize = 15;
const PER_BLOCK: usize = 16;
const PREFIX: usize = 3;

/// Build with weights drawn from `seed`.
pub fn build_tiny_vit(cfg: &TinyTransformerConfig, seed: u64) -> Result<TinyTransformer> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (cfg.embed_dim, cfg.ff_dim);
    let mut params = vec![
        Param::weight("embed.weight".into(), trunc_normal(&[cfg.token_dim, d], INIT_STD, &mut rng), None),
        Param::bias("embed.bias".into(), Tensor::zeros(&[d])),
        Param::weight("pos_embed".into(), trunc_normal(&[cfg.seq_len, d], INIT_STD, &mut rng), None),
    ];
    for l in 0..cfg.layers {
        let name = |s: &str| format!("layers.{l}.{s}");
        let mut proj = |s: &str, rows, cols, group| {
            Param::weight(name(s), trunc_normal(&[rows, cols], INIT_STD, &mut rng), Some(group))
        };
        let q = proj("attn.q.weight", d, d, LayerGroup::Q);
        let k = proj("attn.k.weight", d, d, LayerGroup::K);
        let v = proj("attn.v.weight", d, d, LayerGroup::V);
        let o = proj("attn.o.weight", d, d, LayerGroup::O);
        let ff1 = proj("ff1.weight", d, f, LayerGroup::Ff1);
        let ff2 = proj("ff2.weight", f, d, LayerGroup::Ff2);
        params.extend([
            Param::bias(name("ln1.gamma"), Tensor::ones(&[d])),
            Param::bias(name("ln1.beta"), Tensor::zeros(&[d])),
            q,
            Param::bias(name("attn.q.bias"), Tensor::zeros(&[d])),
            k,
            Param::bias(name("attn.k.bias"), Tensor::zeros(&[d])),
            v,
            Param::bias(name("attn.v.bias"), Tensor::zeros(&[d])),
            o,
            Param::bias(name("attn.o.bias"), Tensor::zeros(&[d])),
            Param::bias(name("ln2.gamma"), Tensor::ones(&[d])),
            Param::bias(name("ln2.beta"), Tensor::zeros(&[d])),
            ff1,
            Param::bias(name("ff1.bias"), Tensor::zeros(&[f])),
            ff2,
            Param::bias(name("ff2.bias"), Tensor::zeros(&[d])),
        ]);
    }
    params.extend([
        Param::bias("final_ln.gamma".into(), Tensor::ones(&[d])),
        Param::bias("final_ln.beta".into(), Tensor::zeros(&[d])),
        Param::weight("head.weight".into(), trunc_normal(&[d, cfg.num_classes], INIT_STD, &mut rng), None),
        Param::bias("head.bias".into(), Tensor::zeros(&[cfg.num_classes])),
    ]);
    Ok(TinyTransformer { cfg: cfg.clone(), params })
}

impl TinyTransformer {
    pub fn config(&self) -> &TinyTransformerConfig {
        &self.cfg
    }

    fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS)?;
        let s = g.mul_broadcast(n, gamma)?;
        g.add_broadcast(s, beta)
    }

    /// `[batch·seq, d]` → `[batch·heads, seq, head_dim]`.
    fn split_heads(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let (s, h) = (self.cfg.seq_len, self.cfg.heads);
        let hd = self.cfg.embed_dim / h;
        let x = g.reshape(x, &[batch, s, h, hd])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * h, s, hd])
    }

    /// Inverse of [`Self::split_heads`].
    fn merge_heads(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let (s, h) = (self.cfg.seq_len, self.cfg.heads);
        let hd = self.cfg.embed_dim / h;
        let x = g.reshape(x, &[batch, h, s, hd])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * s, self.cfg.embed_dim])
    }

    fn block(&self, g: &mut Graph, w: &[Var], h: Var, batch: usize) -> Result<Var> {
        let (s, d) = (self.cfg.seq_len, self.cfg.embed_dim);
        let hd = d / self.cfg.heads;

        let n1 = Self::layer_norm(g, h, w[LN1_G], w[LN1_B])?;
        let flat = g.reshape(n1, &[batch * s, d])?;
        let q = linear(g, flat, w[Q_W], w[Q_B])?;
        let k = linear(g, flat, w[K_W], w[K_B])?;
        let v = linear(g, flat, w[V_W], w[V_B])?;
        let q = self.split_heads(g, q, batch)?;
        let k = self.split_heads(g, k, batch)?;
        let v = self.split_heads(g, v, batch)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, 1.0 / (hd as f64).sqrt());
        let attn = g.softmax(logits)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = self.merge_heads(g, ctx, batch)?;
        let out = linear(g, ctx, w[O_W], w[O_B])?;
        let out = g.reshape(out, &[batch, s, d])?;
        let h = g.add(h, out)?;

        let n2 = Self::layer_norm(g, h, w[LN2_G], w[LN2_B])?;
        let flat = g.reshape(n2, &[batch * s, d])?;
        let ff = linear(g, flat, w[FF1_W], w[FF1_B])?;
        let ff = g.gelu(ff);
        let ff = linear(g, ff, w[FF2_W], w[FF2_B])?;
        let ff = g.reshape(ff, &[batch, s, d])?;
        g.add(h, ff)
    }
}

impl Classifier for TinyTransformer {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn forward(&self, g: &mut Graph, weights: &[Var], inputs: &Tensor) -> Result<Var> {
        let cfg = &self.cfg;
        let batch = match inputs.shape() {
            &[b, s, t] if s == cfg.seq_len && t == cfg.token_dim => b,
            other => {
                return Err(Error::Shape {
                    op: "tiny_vit_input",
                    lhs: other.to_vec(),
                    rhs: vec![0, cfg.seq_len, cfg.token_dim],
                })
            }
        };
        if weights.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weight handles, got {}",
                self.params.len(),
                weights.len()
            )));
        }
        let (s, d) = (cfg.seq_len, cfg.embed_dim);
        let x = g.constant(inputs.clone());
        let x = g.reshape(x, &[batch * s, cfg.token_dim])?;
        let h = linear(g, x, weights[0], weights[1])?;
        let h = g.reshape(h, &[batch, s, d])?;
        let mut h = g.add_broadcast(h, weights[2])?;
        for l in 0..cfg.layers {
            let base = PREFIX + l * PER_BLOCK;
            h = self.block(g, &weights[base..base + PER_BLOCK], h, batch)?;
        }
        let tail = PREFIX + cfg.layers * PER_BLOCK;
        let h = Self::layer_norm(g, h, weights[tail], weights[tail + 1])?;
        let pooled = g.mean_axis(h, 1)?;
        linear(g, pooled, weights[tail + 2], weights[tail + 3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GroupSelector;

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = TinyTransformerConfig {
            layers: 3,
            heads: 3,
            embed_dim: 192,
            ff_dim: 768,
            seq_len: 64,
            token_dim: 48,
            num_classes: 10,
        };
        let model = build_tiny_vit(&cfg, 0).unwrap();
        // per block: 2 layer norms, 4 projections with bias, 2 ff layers with bias
        let per_block = 2 * 2 * 192 + 4 * (192 * 192 + 192) + (192 * 768 + 768) + (768 * 192 + 192);
        let expected = 48 * 192 + 192 + 64 * 192 + 3 * per_block + 2 * 192 + 192 * 10 + 10;
        assert_eq!(model.param_count(), expected);
        assert_eq!(cfg.param_count(), expected);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = TinyTransformerConfig { embed_dim: 10, heads: 3, ..Default::default() };
        assert!(build_tiny_vit(&cfg, 0).is_err());
    }

    #[test]
    fn zero_input_yields_head_bias() {
        let cfg = TinyTransformerConfig { embed_dim: 12, heads: 3, ff_dim: 24, seq_len: 4, token_dim: 5, layers: 2, num_classes: 4 };
        let mut model = build_tiny_vit(&cfg, 1).unwrap();
        let bias = [0.3, -1.2, 0.0, 2.5];
        for p in model.params_mut() {
            if p.name == "pos_embed" {
                p.value = Tensor::zeros(p.value.shape());
            }
            if p.name == "head.bias" {
                p.value = Tensor::new(vec![4], bias.to_vec()).unwrap();
            }
        }
        let logits = model.predict(&Tensor::zeros(&[3, 4, 5])).unwrap();
        assert_eq!(logits.shape(), &[3, 4]);
        for row in logits.data().chunks(4) {
            assert_eq!(row, &bias);
        }
    }

    #[test]
    fn groups_are_registered_on_weight_matrices_only() {
        let model = build_tiny_vit(&TinyTransformerConfig::default(), 0).unwrap();
        let grouped: Vec<_> = model.params().iter().filter(|p| p.group.is_some()).collect();
        assert_eq!(grouped.len(), 3 * 6);
        assert!(grouped.iter().all(|p| p.name.ends_with(".weight") && p.value.rank() == 2));
        let ff = grouped.iter().filter(|p| GroupSelector::Ff.covers(p.group.unwrap())).count();
        assert_eq!(ff, 6);
        assert!(model
            .params()
            .iter()
            .filter(|p| p.name.contains("bias") || p.name.contains("ln") || p.name.contains("embed"))
            .all(|p| p.group.is_none()));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_tiny_vit(&TinyTransformerConfig::default(), 5).unwrap();
        let b = build_tiny_vit(&TinyTransformerConfig::default(), 5).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
