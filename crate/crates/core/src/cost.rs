//! Closed-form FLOPs and parameter accounting for sparsified transformer encoders.
//!
//! Every matrix product of shapes `[a, b] · [b, c]` costs `a·b·c` multiply-
//! accumulates, counted as 2 FLOPs each, per layer, for a single sequence
//! (batch 1). Per encoder layer:
//!
//! | operator      | MACs                 |
//! |---------------|----------------------|
//! | Q, K, V, O    | `seq · d · d` each   |
//! | Logit (QKᵀ)   | `seq · seq · d`      |
//! | Attend (PV)   | `seq · seq · d`      |
//! | FF1, FF2      | `seq · d · d_ff` each|
//!
//! Sparsified operators scale linearly with their density `n/m`. The totals
//! follow `total = SA + FF · S_FF` with `SA = Q + K + V + O + Logit + Attend`.
//! With ViT-Base dimensions (12 layers, width 768, FF 3072, 196 tokens) this
//! gives `SA = 12.514 G`, `FF = 22.196 G` and `total = 34.711 G`.
//!
//! Parameter figures count weight matrices only, reported in millions.

use serde::Serialize;

use crate::models::{GroupSelector, LayerGroup, LayerGroupSelection};
use crate::sparsity::{geometric_schedule, interval_partition, stepwise_schedule, RecipeConfig, RecipeKind, SparsityPattern};
use crate::train::{Phase, PhasePlan};
use crate::{Error, Result};

const GIGA: f64 = 1e9;

/// Transformer dimensions plus per-operator densities in `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostSpec {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    /// Tokens per sequence; for images, the patch count (196 for 224² at patch 16).
    pub seq_len: usize,
    pub density_ff: f64,
    pub density_q: f64,
    pub density_k: f64,
    pub density_v: f64,
    pub density_o: f64,
}

impl CostSpec {
    /// All-dense spec.
    pub fn new(layers: usize, heads: usize, embed_dim: usize, ff_dim: usize, seq_len: usize) -> Self {
        Self {
            layers,
            heads,
            embed_dim,
            ff_dim,
            seq_len,
            density_ff: 1.0,
            density_q: 1.0,
            density_k: 1.0,
            density_v: 1.0,
            density_o: 1.0,
        }
    }

    /// ViT-Base at 224×224 with 16×16 patches.
    pub fn vit_base() -> Self {
        Self::new(12, 12, 768, 3072, 196)
    }

    pub fn with_density_ff(mut self, density: f64) -> Self {
        self.density_ff = density;
        self
    }

    /// Set the density of every operator covered by `selector` to `pattern`'s.
    pub fn with_group(mut self, selector: GroupSelector, pattern: SparsityPattern) -> Self {
        self.set_group_density(selector, pattern.density());
        self
    }

    fn set_group_density(&mut self, selector: GroupSelector, density: f64) {
        let slots = [
            (LayerGroup::Q, &mut self.density_q),
            (LayerGroup::K, &mut self.density_k),
            (LayerGroup::V, &mut self.density_v),
            (LayerGroup::O, &mut self.density_o),
            (LayerGroup::Ff1, &mut self.density_ff),
        ];
        for (group, slot) in slots {
            if selector.covers(group) {
                *slot = density;
            }
        }
    }

    fn density(&self, group: LayerGroup) -> f64 {
        match group {
            LayerGroup::Q => self.density_q,
            LayerGroup::K => self.density_k,
            LayerGroup::V => self.density_v,
            LayerGroup::O => self.density_o,
            LayerGroup::Ff1 | LayerGroup::Ff2 | LayerGroup::Hidden => self.density_ff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("ff_dim", self.ff_dim),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, d) in [
            ("ff", self.density_ff),
            ("q", self.density_q),
            ("k", self.density_k),
            ("v", self.density_v),
            ("o", self.density_o),
        ] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("density for {name} must lie in (0, 1], got {d}")));
            }
        }
        Ok(())
    }
}

/// FLOPs in units of 1e9, parameters as raw counts and in millions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// Projection FLOPs, already scaled by their densities.
    pub flops_q: f64,
    pub flops_k: f64,
    pub flops_v: f64,
    pub flops_o: f64,
    pub flops_logit: f64,
    pub flops_attend: f64,
    /// Dense feed-forward FLOPs.
    pub flops_ff1: f64,
    pub flops_ff2: f64,
    pub flops_sa: f64,
    /// Dense `FF1 + FF2`.
    pub flops_ff: f64,
    /// `flops_ff · S_FF`.
    pub flops_ff_sparse: f64,
    pub flops_total: f64,
    pub params_projections: u64,
    pub params_ff: u64,
    pub params_projections_m: f64,
    pub params_ff_m: f64,
}

/// Evaluate the closed-form cost of one forward pass over one sequence.
pub fn compute_cost(spec: &CostSpec) -> Result<CostBreakdown> {
    spec.validate()?;
    let (l, d, f, s) = (
        spec.layers as f64,
        spec.embed_dim as f64,
        spec.ff_dim as f64,
        spec.seq_len as f64,
    );
    let gflops = |macs: f64| 2.0 * macs * l / GIGA;
    let proj = gflops(s * d * d);
    let ff_layer = gflops(s * d * f);
    let einsum = gflops(s * s * d);

    let flops_q = proj * spec.density(LayerGroup::Q);
    let flops_k = proj * spec.density(LayerGroup::K);
    let flops_v = proj * spec.density(LayerGroup::V);
    let flops_o = proj * spec.density(LayerGroup::O);
    let flops_sa = flops_q + flops_k + flops_v + flops_o + einsum + einsum;
    let flops_ff = ff_layer + ff_layer;
    let flops_ff_sparse = flops_ff * spec.density_ff;

    let params_projections = (4 * spec.embed_dim * spec.embed_dim * spec.layers) as u64;
    let params_ff = (2 * spec.embed_dim * spec.ff_dim * spec.layers) as u64;
    Ok(CostBreakdown {
        flops_q,
        flops_k,
        flops_v,
        flops_o,
        flops_logit: einsum,
        flops_attend: einsum,
        flops_ff1: ff_layer,
        flops_ff2: ff_layer,
        flops_sa,
        flops_ff,
        flops_ff_sparse,
        flops_total: flops_sa + flops_ff_sparse,
        params_projections,
        params_ff,
        params_projections_m: params_projections as f64 / 1e6,
        params_ff_m: params_ff as f64 / 1e6,
    })
}

/// FF densities of the FLOPs-table rows: dense, 2:4, 1:4, 1:8, 1:16, 1:32, 1:128.
pub const TABLE_FF_PATTERNS: [(usize, usize); 7] = [(1, 1), (2, 4), (1, 4), (1, 8), (1, 16), (1, 32), (1, 128)];

/// One row per FF pattern of [`TABLE_FF_PATTERNS`] on `base`.
pub fn ff_sweep(base: &CostSpec) -> Result<Vec<(SparsityPattern, CostBreakdown)>> {
    TABLE_FF_PATTERNS
        .iter()
        .map(|&(n, m)| {
            let p = SparsityPattern::new(n, m)?;
            Ok((p, compute_cost(&base.clone().with_group(GroupSelector::Ff, p))?))
        })
        .collect()
}

/// How backward cost relates to forward cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingFlopsConfig {
    /// Forward + backward cost as a multiple of forward; 3 counts backward as 2× forward.
    pub pass_multiplier: f64,
}

impl Default for TrainingFlopsConfig {
    fn default() -> Self {
        Self { pass_multiplier: 3.0 }
    }
}

fn group_stages(recipe: &RecipeConfig, target: SparsityPattern) -> Result<Vec<SparsityPattern>> {
    match recipe.kind {
        RecipeKind::SdgfStepwise => stepwise_schedule(target),
        RecipeKind::SdgfGeometric => geometric_schedule(target, recipe.k_geo),
        _ => Ok(vec![target]),
    }
}

/// Total training GFLOPs of `recipe` under `plan`, sparsifying `groups` of `spec`.
///
/// Dense phase: density 1. Decay phase: structure-decay recipes run at each
/// stage's density; mask-decay recipes multiply by dense-valued masks and
/// save nothing. Fine-tune: the target density for mask- and structure-decay
/// recipes. SR-STE and dense training cost the dense rate throughout.
/// Elementwise mask and regularizer work is not counted. The densities
/// already set on `spec` are ignored in favour of `groups`.
pub fn training_flops(
    spec: &CostSpec,
    recipe: &RecipeConfig,
    plan: &PhasePlan,
    groups: &LayerGroupSelection,
    cfg: &TrainingFlopsConfig,
) -> Result<f64> {
    let base = CostSpec {
        density_ff: 1.0,
        density_q: 1.0,
        density_k: 1.0,
        density_v: 1.0,
        density_o: 1.0,
        ..spec.clone()
    };
    let per_step = |densities: &[(GroupSelector, f64)]| -> Result<f64> {
        let mut s = base.clone();
        for &(sel, d) in densities {
            s.set_group_density(sel, d);
        }
        Ok(compute_cost(&s)?.flops_total * cfg.pass_multiplier)
    };
    let dense_rate = per_step(&[])?;
    let sparse_recipe = !matches!(recipe.kind, RecipeKind::Dense | RecipeKind::SrSte);
    if !sparse_recipe || groups.is_empty() {
        return Ok(dense_rate * plan.total_steps() as f64);
    }

    let target: Vec<(GroupSelector, f64)> = groups.entries().iter().map(|&(s, p)| (s, p.density())).collect();
    let finetune_rate = per_step(&target)?;
    let decay_total = if recipe.kind.is_structure_decay() && plan.decay_steps() > 0 {
        // per group: stage densities and their cumulative end steps
        let staged = groups
            .entries()
            .iter()
            .map(|&(sel, p)| {
                let stages = group_stages(recipe, p)?;
                let lens = interval_partition(plan.decay_steps(), stages.len())?;
                let ends: Vec<usize> = lens.iter().scan(0, |acc, l| { *acc += l; Some(*acc) }).collect();
                Ok((sel, stages, ends))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for j in 0..plan.decay_steps() {
            let densities: Vec<(GroupSelector, f64)> = staged
                .iter()
                .map(|(sel, stages, ends)| {
                    let idx = ends.iter().position(|&e| j < e).unwrap_or(stages.len() - 1);
                    (*sel, stages[idx].density())
                })
                .collect();
            total += per_step(&densities)?;
        }
        total
    } else {
        dense_rate * plan.decay_steps() as f64
    };

    Ok(dense_rate * plan.steps_in(Phase::Dense) as f64
        + decay_total
        + finetune_rate * plan.steps_in(Phase::Finetune) as f64)
}
