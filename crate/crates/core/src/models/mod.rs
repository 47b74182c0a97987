//! Sparsifiable classifiers.
//!
//! Weight matrices are stored `[in, out]` and applied as `x · W`, so N:M
//! blocks run along axis 0, the reduction dimension of each product.
//! Only projection and feed-forward weight matrices carry a [`LayerGroup`];
//! biases, embeddings and layer-norm parameters are never sparsified.

mod checkpoint;
mod mlp;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::sparsity::SparsityPattern;
use crate::{Error, Result};

pub use checkpoint::{load_tensors, save_tensors};
pub use mlp::{build_mlp, Mlp};
pub use transformer::{build_tiny_vit, TinyTransformer, TinyTransformerConfig};

/// Axis along which N:M blocks are formed for every weight matrix.
pub const WEIGHT_BLOCK_AXIS: usize = 0;

/// Named role of a sparsifiable weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerGroup {
    Q,
    K,
    V,
    O,
    Ff1,
    Ff2,
    /// Hidden layer of an MLP.
    Hidden,
}

impl LayerGroup {
    pub fn name(self) -> &'static str {
        match self {
            LayerGroup::Q => "q",
            LayerGroup::K => "k",
            LayerGroup::V => "v",
            LayerGroup::O => "o",
            LayerGroup::Ff1 => "ff1",
            LayerGroup::Ff2 => "ff2",
            LayerGroup::Hidden => "hidden",
        }
    }

    /// Feed-forward weights, the layers tracked by the noise diagnostics.
    pub fn is_feed_forward(self) -> bool {
        matches!(self, LayerGroup::Ff1 | LayerGroup::Ff2 | LayerGroup::Hidden)
    }
}

/// User-facing selection of layer groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupSelector {
    /// FF1 and FF2 (and MLP hidden layers).
    Ff,
    Qk,
    Qkv,
    O,
}

impl GroupSelector {
    pub fn covers(self, group: LayerGroup) -> bool {
        use LayerGroup::*;
        match self {
            GroupSelector::Ff => matches!(group, Ff1 | Ff2 | Hidden),
            GroupSelector::Qk => matches!(group, Q | K),
            GroupSelector::Qkv => matches!(group, Q | K | V),
            GroupSelector::O => group == O,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupSelector::Ff => "ff",
            GroupSelector::Qk => "qk",
            GroupSelector::Qkv => "qkv",
            GroupSelector::O => "o",
        }
    }
}

impl fmt::Display for GroupSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(GroupSelector::Ff),
            "qk" => Ok(GroupSelector::Qk),
            "qkv" => Ok(GroupSelector::Qkv),
            "o" => Ok(GroupSelector::O),
            _ => Err(Error::Config(format!("unknown layer group `{s}`; expected ff, qk, qkv or o"))),
        }
    }
}

/// Which groups are sparsified, each with its own target pattern.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGroupSelection {
    entries: Vec<(GroupSelector, SparsityPattern)>,
}

impl LayerGroupSelection {
    /// Fails if two entries would govern the same layer.
    pub fn new(entries: Vec<(GroupSelector, SparsityPattern)>) -> Result<Self> {
        const ALL: [LayerGroup; 7] = [
            LayerGroup::Q,
            LayerGroup::K,
            LayerGroup::V,
            LayerGroup::O,
            LayerGroup::Ff1,
            LayerGroup::Ff2,
            LayerGroup::Hidden,
        ];
        for group in ALL {
            let owners: Vec<_> = entries.iter().filter(|(s, _)| s.covers(group)).collect();
            if owners.len() > 1 {
                return Err(Error::Config(format!(
                    "layer group `{}` is selected more than once ({})",
                    group.name(),
                    owners.iter().map(|(s, _)| s.name()).collect::<Vec<_>>().join(", ")
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Every listed selector at the same pattern.
    pub fn uniform(selectors: &[GroupSelector], pattern: SparsityPattern) -> Result<Self> {
        Self::new(selectors.iter().map(|&s| (s, pattern)).collect())
    }

    pub fn entries(&self) -> &[(GroupSelector, SparsityPattern)] {
        &self.entries
    }

    pub fn pattern_for(&self, group: LayerGroup) -> Option<SparsityPattern> {
        self.entries.iter().find(|(s, _)| s.covers(group)).map(|&(_, p)| p)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A trainable tensor with its sparsification role.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// `Some` for sparsifiable weight matrices.
    pub group: Option<LayerGroup>,
    /// Whether decoupled weight decay applies.
    pub weight_decay: bool,
}

impl Param {
    fn weight(name: String, value: Tensor, group: Option<LayerGroup>) -> Self {
        Self {
            name,
            value,
            group,
            weight_decay: true,
        }
    }

    fn bias(name: String, value: Tensor) -> Self {
        Self {
            name,
            value,
            group: None,
            weight_decay: false,
        }
    }
}

/// A classifier mapping a batch of `[batch, seq, token_dim]` inputs to `[batch, classes]` logits.
pub trait Classifier {
    fn params(&self) -> &[Param];
    fn params_mut(&mut self) -> &mut [Param];
    fn num_classes(&self) -> usize;

    /// Record the forward pass; `weights[i]` stands in for `params()[i]`.
    fn forward(&self, g: &mut Graph, weights: &[Var], inputs: &Tensor) -> Result<Var>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Logits with every parameter used as stored.
    fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let weights: Vec<Var> = self.params().iter().map(|p| g.constant(p.value.clone())).collect();
        let out = self.forward(&mut g, &weights, inputs)?;
        Ok(g.value(out).clone())
    }
}

/// Either of the built-in classifiers.
#[derive(Clone, Debug)]
pub enum Model {
    Transformer(TinyTransformer),
    Mlp(Mlp),
}

impl Classifier for Model {
    fn params(&self) -> &[Param] {
        match self {
            Model::Transformer(m) => m.params(),
            Model::Mlp(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [Param] {
        match self {
            Model::Transformer(m) => m.params_mut(),
            Model::Mlp(m) => m.params_mut(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            Model::Transformer(m) => m.num_classes(),
            Model::Mlp(m) => m.num_classes(),
        }
    }

    fn forward(&self, g: &mut Graph, weights: &[Var], inputs: &Tensor) -> Result<Var> {
        match self {
            Model::Transformer(m) => m.forward(g, weights, inputs),
            Model::Mlp(m) => m.forward(g, weights, inputs),
        }
    }
}

impl Model {
    /// Write all parameters to a checkpoint file.
    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let entries: Vec<(String, Tensor)> =
            self.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        save_tensors(path, &entries)
    }

    /// Overwrite parameters from a checkpoint with matching names and shapes.
    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let entries = load_tensors(path)?;
        if entries.len() != self.params().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                entries.len(),
                self.params().len()
            )));
        }
        for (param, (name, value)) in self.params_mut().iter_mut().zip(entries) {
            if param.name != name || param.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected `{}` {:?}, found `{name}` {:?}",
                    param.name,
                    param.value.shape(),
                    value.shape()
                )));
            }
            param.value = value;
        }
        Ok(())
    }
}

/// Normal(0, std²) truncated at ±2 std by resampling.
pub(crate) fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// `x · w + b` for a 2-D `x`.
pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_broadcast(y, b)
}

/// Projection weights use std 0.02.
pub(crate) const INIT_STD: f64 = 0.02;
