use crate::autograd::Tensor;
use crate::models::{LayerGroupSelection, Param, WEIGHT_BLOCK_AXIS};
use crate::sparsity::{
    compute_nm_mask, decay_factor, geometric_schedule, interval_partition, stepwise_schedule, MaskState,
    RecipeConfig, RecipeKind, SparsityPattern,
};
use crate::train::{Phase, PhasePlan};
use crate::{Error, Result};

/// Decay factors below this snap the mask-decay recipes to a binary mask.
pub const SNAP_THRESHOLD: f64 = 1e-6;

/// How one weight tensor enters the forward pass at a step.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerMask {
    /// `w ⊙ (mask + δ(1 − mask))`, differentiated through.
    Decayed(MaskState),
    /// `w ⊙ mask` fed as a leaf; the dense weights receive the refined gradient.
    SrSte(Tensor),
}

impl LayerMask {
    pub fn binary_mask(&self) -> &Tensor {
        match self {
            LayerMask::Decayed(s) => s.binary_mask(),
            LayerMask::SrSte(m) => m,
        }
    }

    /// The weights the forward pass sees.
    pub fn effective(&self, w: &Tensor) -> Tensor {
        let coef = match self {
            LayerMask::Decayed(s) => s.coefficients(),
            LayerMask::SrSte(m) => m.clone(),
        };
        let data = w.data().iter().zip(coef.data()).map(|(w, c)| w * c).collect();
        Tensor::new(w.shape().to_vec(), data).expect("mask shape matches weights")
    }
}

/// Recipe state shared by all sparsified layers at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regime {
    pub phase: Phase,
    /// Multiplier of pruned positions; 1 when nothing is masked.
    pub decay_factor: f64,
    /// Pattern in force on the first sparsified layer; `m:m` while dense.
    pub active: SparsityPattern,
    /// Index into the structure-decay schedule, if any.
    pub stage: Option<usize>,
    /// Whether the first sparsified layer runs on its frozen target mask.
    pub frozen: bool,
}

#[derive(Clone, Debug)]
struct SparseLayer {
    param_index: usize,
    target: SparsityPattern,
    stages: Vec<SparsityPattern>,
    /// Cumulative decay-phase step at which each stage ends.
    stage_ends: Vec<usize>,
    frozen: Option<Tensor>,
}

impl SparseLayer {
    fn stage(&self, j: usize) -> usize {
        self.stage_ends.iter().position(|&e| j < e).unwrap_or(self.stages.len() - 1)
    }
}

/// Per-step mask orchestration for one recipe over a model's parameters.
#[derive(Clone, Debug)]
pub struct SparsityController {
    recipe: RecipeConfig,
    plan: PhasePlan,
    layers: Vec<SparseLayer>,
}

impl SparsityController {
    /// Resolve default decay rates, build schedules and check every selected
    /// weight's block axis divides by each pattern's `m`.
    pub fn new(recipe: &RecipeConfig, groups: &LayerGroupSelection, plan: &PhasePlan, params: &[Param]) -> Result<Self> {
        recipe.validate()?;
        plan.validate()?;
        let recipe = recipe.resolved(plan.decay_steps());
        let mut layers = Vec::new();
        if recipe.kind != RecipeKind::Dense {
            for (i, p) in params.iter().enumerate() {
                let Some(target) = p.group.and_then(|g| groups.pattern_for(g)) else {
                    continue;
                };
                let stages = match recipe.kind {
                    RecipeKind::SdgfStepwise => stepwise_schedule(target)?,
                    RecipeKind::SdgfGeometric => geometric_schedule(target, recipe.k_geo)?,
                    _ => vec![target],
                };
                let lens = if recipe.kind.is_structure_decay() {
                    if plan.decay_steps() < stages.len() {
                        return Err(Error::Config(format!(
                            "decay phase of {} steps cannot hold the {} stages of `{}`",
                            plan.decay_steps(),
                            stages.len(),
                            p.name
                        )));
                    }
                    interval_partition(plan.decay_steps(), stages.len())?
                } else {
                    vec![plan.decay_steps()]
                };
                let len = p.value.shape()[WEIGHT_BLOCK_AXIS];
                for s in &stages {
                    if len % s.m() != 0 {
                        return Err(Error::Divisibility {
                            layer: p.name.clone(),
                            axis: WEIGHT_BLOCK_AXIS,
                            len,
                            m: s.m(),
                        });
                    }
                }
                let stage_ends = lens
                    .iter()
                    .scan(0, |acc, l| {
                        *acc += l;
                        Some(*acc)
                    })
                    .collect();
                layers.push(SparseLayer {
                    param_index: i,
                    target,
                    stages,
                    stage_ends,
                    frozen: None,
                });
            }
        }
        Ok(Self {
            recipe,
            plan: *plan,
            layers,
        })
    }

    /// The recipe with its decay rates filled in.
    pub fn recipe(&self) -> &RecipeConfig {
        &self.recipe
    }

    /// Indices of the sparsified parameters.
    pub fn sparse_params(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().map(|l| l.param_index)
    }

    pub fn target_of(&self, param_index: usize) -> Option<SparsityPattern> {
        self.layers.iter().find(|l| l.param_index == param_index).map(|l| l.target)
    }

    fn mask_decay_factor(&self, j: usize) -> Result<f64> {
        let d = decay_factor(&self.recipe, j)?;
        Ok(if d < SNAP_THRESHOLD { 0.0 } else { d })
    }

    /// Recipe state at the 0-based `step`, independent of weights.
    pub fn regime(&self, step: usize) -> Result<Regime> {
        let phase = self.plan.phase(step);
        let Some(first) = self.layers.first() else {
            return Ok(Regime {
                phase,
                decay_factor: 1.0,
                active: SparsityPattern::new(1, 1)?,
                stage: None,
                frozen: false,
            });
        };
        let dense = Regime {
            phase,
            decay_factor: 1.0,
            active: SparsityPattern::dense(first.target.m())?,
            stage: None,
            frozen: false,
        };
        let binary = |active, stage, frozen| Regime {
            phase,
            decay_factor: 0.0,
            active,
            stage,
            frozen,
        };
        let j = step.saturating_sub(self.plan.dense_steps());
        Ok(match (phase, self.recipe.kind) {
            (Phase::Dense, _) | (_, RecipeKind::Dense) => dense,
            (_, RecipeKind::SrSte) => binary(first.target, None, false),
            (Phase::Decay, kind) if kind.is_mask_decay() => {
                let d = self.mask_decay_factor(j)?;
                Regime {
                    phase,
                    decay_factor: d,
                    active: first.target,
                    stage: None,
                    frozen: d == 0.0,
                }
            }
            (Phase::Decay, _) => {
                let s = first.stage(j);
                binary(first.stages[s], Some(s), false)
            }
            (Phase::Finetune, _) => binary(first.target, None, true),
        })
    }

    /// Masks for the step, indexed like `params`; `None` leaves a parameter
    /// untouched. Freezes target masks from the current weights on the first
    /// step that needs them.
    pub fn masks(&mut self, step: usize, params: &[Param]) -> Result<Vec<Option<LayerMask>>> {
        let mut out = vec![None; params.len()];
        let phase = self.plan.phase(step);
        if phase == Phase::Dense || self.recipe.kind == RecipeKind::Dense {
            return Ok(out);
        }
        let j = step - self.plan.dense_steps();
        let kind = self.recipe.kind;
        let snap_d = if kind.is_mask_decay() && phase == Phase::Decay {
            Some(self.mask_decay_factor(j)?)
        } else {
            None
        };
        for layer in &mut self.layers {
            let w = &params[layer.param_index].value;
            let mask = match (phase, kind) {
                (_, RecipeKind::SrSte) => {
                    LayerMask::SrSte(compute_nm_mask(w, layer.target, WEIGHT_BLOCK_AXIS)?)
                }
                (Phase::Decay, k) if k.is_mask_decay() && snap_d != Some(0.0) => {
                    MaskState::compute(w, layer.target, WEIGHT_BLOCK_AXIS, snap_d.unwrap_or(0.0)).map(LayerMask::Decayed)?
                }
                (Phase::Decay, k) if k.is_structure_decay() => {
                    let s = layer.stages[layer.stage(j)];
                    LayerMask::Decayed(MaskState::compute(w, s, WEIGHT_BLOCK_AXIS, 0.0)?)
                }
                _ => {
                    let frozen = match &layer.frozen {
                        Some(m) => m.clone(),
                        None => {
                            let m = compute_nm_mask(w, layer.target, WEIGHT_BLOCK_AXIS)?;
                            layer.frozen = Some(m.clone());
                            m
                        }
                    };
                    LayerMask::Decayed(MaskState::new(frozen, 0.0, layer.target)?)
                }
            };
            out[layer.param_index] = Some(mask);
        }
        Ok(out)
    }

    /// Final binary target masks: the frozen mask where one exists, else
    /// magnitude masks of the current weights.
    pub fn final_masks(&mut self, params: &[Param]) -> Result<Vec<(usize, Tensor)>> {
        let freezes = self.recipe.kind != RecipeKind::SrSte;
        self.layers
            .iter_mut()
            .map(|layer| {
                let mask = match &layer.frozen {
                    Some(m) => m.clone(),
                    None => {
                        let m = compute_nm_mask(&params[layer.param_index].value, layer.target, WEIGHT_BLOCK_AXIS)?;
                        if freezes {
                            layer.frozen = Some(m.clone());
                        }
                        m
                    }
                };
                Ok((layer.param_index, mask))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_mlp, Classifier, GroupSelector};

    fn setup(kind: RecipeKind, total: usize) -> (SparsityController, Vec<Param>) {
        let target = SparsityPattern::new(1, 8).unwrap();
        let model = build_mlp(&[16, 16, 4], 0).unwrap();
        let groups = LayerGroupSelection::uniform(&[GroupSelector::Ff], target).unwrap();
        let plan = PhasePlan::with_defaults(total).unwrap();
        let params = model.params().to_vec();
        (
            SparsityController::new(&RecipeConfig::new(kind, target), &groups, &plan, &params).unwrap(),
            params,
        )
    }

    #[test]
    fn linear_decay_reaches_zero_at_phase_end() {
        let (c, _) = setup(RecipeKind::MdgfLinear, 1000);
        assert_eq!(c.regime(49).unwrap().decay_factor, 1.0);
        assert_eq!(c.regime(50).unwrap().decay_factor, 1.0);
        assert!(c.regime(899).unwrap().decay_factor > 0.0);
        assert_eq!(c.regime(900).unwrap().decay_factor, 0.0);
        assert!(c.regime(900).unwrap().frozen);
    }

    #[test]
    fn stepwise_stage_boundaries() {
        let (c, _) = setup(RecipeKind::SdgfStepwise, 1000);
        let starts: Vec<usize> = (51..900)
            .filter(|&s| c.regime(s).unwrap().stage != c.regime(s - 1).unwrap().stage)
            .collect();
        // cumulative sums of the partition [213, 213, 212, 212]
        assert_eq!(starts, vec![50 + 213, 50 + 426, 50 + 638]);
        assert_eq!(c.regime(50).unwrap().active.to_string(), "7:8");
        assert_eq!(c.regime(899).unwrap().active.to_string(), "1:8");
    }

    #[test]
    fn finetune_mask_is_frozen() {
        let (mut c, mut params) = setup(RecipeKind::MdgfExp, 100);
        let a = c.masks(90, &params).unwrap();
        params[0].value.data_mut().iter_mut().for_each(|v| *v = -*v * 1.5 + 0.01);
        let b = c.masks(91, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].as_ref().unwrap().binary_mask().data().iter().sum::<f64>(), 16.0 * 16.0 / 8.0);
    }

    #[test]
    fn only_hidden_layers_are_sparsified() {
        let (mut c, params) = setup(RecipeKind::SrSte, 100);
        let masks = c.masks(10, &params).unwrap();
        let present: Vec<usize> = masks.iter().enumerate().filter(|(_, m)| m.is_some()).map(|(i, _)| i).collect();
        assert_eq!(present, vec![0]);
    }

    #[test]
    fn indivisible_layer_is_named() {
        let target = SparsityPattern::new(1, 8).unwrap();
        let model = build_mlp(&[12, 16, 4], 0).unwrap();
        let groups = LayerGroupSelection::uniform(&[GroupSelector::Ff], target).unwrap();
        let plan = PhasePlan::with_defaults(100).unwrap();
        let err = SparsityController::new(
            &RecipeConfig::new(RecipeKind::MdgfExp, target),
            &groups,
            &plan,
            model.params(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("layers.0.weight"), "{err}");
    }

    #[test]
    fn too_short_decay_for_geometric_schedule() {
        let target = SparsityPattern::new(1, 8).unwrap();
        let model = build_mlp(&[128, 16, 4], 0).unwrap();
        let groups = LayerGroupSelection::uniform(&[GroupSelector::Ff], target).unwrap();
        let plan = PhasePlan::new(10, 0.5, 0.2).unwrap();
        let recipe = RecipeConfig::new(RecipeKind::SdgfGeometric, target);
        assert!(SparsityController::new(&recipe, &groups, &plan, model.params()).is_err());
    }
}
