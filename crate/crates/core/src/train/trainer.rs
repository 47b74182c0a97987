use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::controller::{LayerMask, Regime, SparsityController};
use super::diagnostics::{DiagnosticsConfig, LayerDiagnostics, NoiseDiagnostics};
use super::optim::{clip_global_norm, AdamW, LrSchedule, OptimizerConfig};
use super::plan::{Phase, PhasePlan};
use crate::autograd::{Graph, Tensor, Var};
use crate::data::Dataset;
use crate::models::{Classifier, LayerGroupSelection};
use crate::sparsity::{apply_decayed_mask, refined_gradient, RecipeConfig, RecipeKind};
use crate::{Error, Result};

/// First line of every training CSV.
pub const CSV_SCHEMA_LINE: &str = "# nm-decay training log v1";

fn d_batch() -> usize {
    32
}
fn d_eval_batch() -> usize {
    256
}
fn d_log_every() -> usize {
    10
}
fn d_eval_every() -> usize {
    100
}

/// Batch sizes and logging cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
    /// A row is logged after every `log_every` steps and after the last step.
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    /// Logged rows whose step count is a multiple of this also carry eval accuracy.
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            batch_size: d_batch(),
            eval_batch_size: d_eval_batch(),
            log_every: d_log_every(),
            eval_every: d_eval_every(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("log_every", self.log_every),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Everything besides model and data that determines a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub recipe: RecipeConfig,
    pub groups: LayerGroupSelection,
    pub plan: PhasePlan,
    pub optimizer: OptimizerConfig,
    pub diagnostics: DiagnosticsConfig,
    pub looping: LoopConfig,
    /// Seeds the minibatch order.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
}

/// Top-1 accuracy and mean cross-entropy with parameters used as stored.
/// Ties in the logits go to the lower class index.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, dataset: &Dataset, batch_size: usize) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch_size = batch_size.max(1);
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (inputs, labels) = dataset.batch(chunk);
        let mut g = Graph::new();
        let weights: Vec<Var> = model.params().iter().map(|p| g.constant(p.value.clone())).collect();
        let logits = model.forward(&mut g, &weights, &inputs)?;
        let loss = g.cross_entropy(logits, &labels)?;
        loss_sum += g.value(loss).item()? * chunk.len() as f64;
        let classes = model.num_classes();
        for (row, &label) in g.value(logits).data().chunks(classes).zip(&labels) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / dataset.len() as f64,
        loss: loss_sum / dataset.len() as f64,
    })
}

/// One logged step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    /// Steps completed so far.
    pub step: usize,
    pub phase: Phase,
    /// Minibatch loss of this step.
    pub loss: f64,
    pub eval_acc: Option<f64>,
    pub decay_factor: f64,
    pub active_n: usize,
    pub active_m: usize,
    /// Mean over tracked layers.
    pub grad_var_ema: Option<f64>,
    pub second_moment_var_ema: Option<f64>,
    pub lr: f64,
}

/// Maximal run of steps sharing one mask regime.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeSegment {
    /// First 0-based step.
    pub start: usize,
    /// One past the last step.
    pub end: usize,
    pub phase: Phase,
    pub active: String,
    pub stage: Option<usize>,
    pub frozen: bool,
}

impl RegimeSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Achieved sparsity of one layer group after training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityAudit {
    pub group: String,
    pub pruned: usize,
    pub total: usize,
}

impl SparsityAudit {
    pub fn fraction(&self) -> f64 {
        self.pruned as f64 / self.total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    /// Recipe with its decay rates filled in.
    pub recipe: RecipeConfig,
    pub seed: u64,
    pub rows: Vec<LogRow>,
    /// Minibatch loss of every step.
    pub losses: Vec<f64>,
    pub segments: Vec<RegimeSegment>,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub sparsity: Vec<SparsityAudit>,
    pub final_eval: EvalResult,
}

impl TrainingReport {
    /// Steps spent in each phase, summed over segments.
    pub fn phase_steps(&self, phase: Phase) -> usize {
        self.segments.iter().filter(|s| s.phase == phase).map(RegimeSegment::len).sum()
    }

    /// Mean over tracked layers of the final gradient-variance EMA.
    pub fn final_grad_var(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.diagnostics.iter().map(|d| d.grad_var_ema).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Write the step log as CSV, preceded by [`CSV_SCHEMA_LINE`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_SCHEMA_LINE}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "phase",
            "loss",
            "eval_acc",
            "decay_factor",
            "active_n",
            "active_m",
            "grad_var_ema",
            "second_moment_var_ema",
            "lr",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.phase.to_string(),
                r.loss.to_string(),
                opt(r.eval_acc),
                r.decay_factor.to_string(),
                r.active_n.to_string(),
                r.active_m.to_string(),
                opt(r.grad_var_ema),
                opt(r.second_moment_var_ema),
                r.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Epoch-wise shuffled minibatch indices.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        Self {
            order: (0..len).collect(),
            cursor: len,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Copy of `model` with masked parameters replaced by their effective values.
fn masked_copy<M: Classifier + Clone>(model: &M, masks: &[Option<LayerMask>]) -> M {
    let mut out = model.clone();
    for (p, mask) in out.params_mut().iter_mut().zip(masks) {
        if let Some(mask) = mask {
            p.value = mask.effective(&p.value);
        }
    }
    out
}

fn same_regime(a: &Regime, b: &Regime) -> bool {
    a.phase == b.phase && a.active == b.active && a.stage == b.stage && a.frozen == b.frozen
}

/// Train `model` in place through the dense, decay and fine-tune phases.
///
/// On return the sparsified parameters hold their effective values under the
/// final binary target masks. Fails with [`Error::NonFiniteLoss`] as soon as
/// a minibatch loss is NaN or infinite.
pub fn run_training<M: Classifier + Clone>(
    model: &mut M,
    spec: &TrainSpec,
    train: &Dataset,
    eval: &Dataset,
) -> Result<TrainingReport> {
    spec.optimizer.validate()?;
    spec.diagnostics.validate()?;
    spec.looping.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut controller = SparsityController::new(&spec.recipe, &spec.groups, &spec.plan, model.params())?;
    let total = spec.plan.total_steps();
    let lambda_w = controller.recipe().lambda_w;
    let mut opt = AdamW::new(spec.optimizer.clone(), model.params());
    let schedule = LrSchedule::new(&spec.optimizer, total);
    let tracked = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.group.is_some_and(|g| g.is_feed_forward()))
        .map(|(i, p)| (i, p.name.clone()))
        .collect();
    let mut diag = NoiseDiagnostics::new(spec.diagnostics.clone(), tracked);
    let mut sampler = BatchSampler::new(train.len(), spec.seed);

    let mut rows = Vec::new();
    let mut losses = Vec::with_capacity(total);
    let mut segments: Vec<RegimeSegment> = Vec::new();
    let mut last_regime: Option<Regime> = None;

    for step in 0..total {
        let regime = controller.regime(step)?;
        match (&last_regime, segments.last_mut()) {
            (Some(prev), Some(seg)) if same_regime(prev, &regime) => seg.end = step + 1,
            _ => segments.push(RegimeSegment {
                start: step,
                end: step + 1,
                phase: regime.phase,
                active: regime.active.to_string(),
                stage: regime.stage,
                frozen: regime.frozen,
            }),
        }
        last_regime = Some(regime);

        let masks = controller.masks(step, model.params())?;
        let (inputs, labels) = train.batch(&sampler.next_batch(spec.looping.batch_size));
        let mut g = Graph::new();
        let mut leaves = Vec::with_capacity(masks.len());
        let mut weights = Vec::with_capacity(masks.len());
        for (p, mask) in model.params().iter().zip(&masks) {
            let (leaf, w) = match mask {
                None => {
                    let leaf = g.param(p.value.clone());
                    (leaf, leaf)
                }
                Some(LayerMask::Decayed(state)) => {
                    let leaf = g.param(p.value.clone());
                    (leaf, apply_decayed_mask(&mut g, leaf, state)?)
                }
                Some(m @ LayerMask::SrSte(_)) => {
                    let leaf = g.param(m.effective(&p.value));
                    (leaf, leaf)
                }
            };
            leaves.push(leaf);
            weights.push(w);
        }
        let logits = model.forward(&mut g, &weights, &inputs)?;
        let loss_var = g.cross_entropy(logits, &labels)?;
        let loss = g.value(loss_var).item()?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(loss);
        g.backward(loss_var)?;

        let mut grads = Vec::with_capacity(leaves.len());
        for ((p, &leaf), mask) in model.params().iter().zip(&leaves).zip(&masks) {
            let grad = g.take_grad(leaf).unwrap_or_else(|| vec![0.0; p.value.len()]);
            grads.push(match mask {
                Some(LayerMask::SrSte(m)) => {
                    let gm = Tensor::new(p.value.shape().to_vec(), grad)?;
                    refined_gradient(&p.value, &gm, m, lambda_w)?.into_data()
                }
                _ => grad,
            });
        }
        if let Some(max_norm) = spec.optimizer.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        let lr = schedule.lr(step);
        opt.step(model.params_mut(), &grads, lr)?;
        if diag.config().is_sampling_step(step) {
            diag.sample(&grads, opt.second_moments());
        }

        let done = step + 1;
        let last = done == total;
        if done % spec.looping.log_every == 0 || last {
            let eval_acc = if last {
                None // filled in after finalisation
            } else if done % spec.looping.eval_every == 0 {
                let probe = controller.masks(step, model.params())?;
                Some(evaluate(&masked_copy(model, &probe), eval, spec.looping.eval_batch_size)?.accuracy)
            } else {
                None
            };
            rows.push(LogRow {
                step: done,
                phase: regime.phase,
                loss,
                eval_acc,
                decay_factor: regime.decay_factor,
                active_n: regime.active.n(),
                active_m: regime.active.m(),
                grad_var_ema: diag.mean_grad_var(),
                second_moment_var_ema: diag.mean_second_moment_var(),
                lr,
            });
        }
    }

    let mut audits: Vec<SparsityAudit> = Vec::new();
    if controller.recipe().kind != RecipeKind::Dense {
        for (i, mask) in controller.final_masks(model.params())? {
            let p = &mut model.params_mut()[i];
            let masked: Vec<f64> = p.value.data().iter().zip(mask.data()).map(|(w, m)| w * m).collect();
            p.value = Tensor::new(p.value.shape().to_vec(), masked)?;
            let group = p.group.map(|g| g.name()).unwrap_or("other").to_string();
            let pruned = mask.data().iter().filter(|&&m| m == 0.0).count();
            match audits.iter_mut().find(|a| a.group == group) {
                Some(a) => {
                    a.pruned += pruned;
                    a.total += mask.len();
                }
                None => audits.push(SparsityAudit {
                    group,
                    pruned,
                    total: mask.len(),
                }),
            }
        }
    }
    let final_eval = evaluate(model, eval, spec.looping.eval_batch_size)?;
    if let Some(row) = rows.last_mut() {
        row.eval_acc = Some(final_eval.accuracy);
    }

    Ok(TrainingReport {
        recipe: controller.recipe().clone(),
        seed: spec.seed,
        rows,
        losses,
        segments,
        diagnostics: diag.layers().to_vec(),
        sparsity: audits,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(10, 7);
        let mut first: Vec<usize> = s.next_batch(4).into_iter().chain(s.next_batch(6)).collect();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let again: Vec<usize> = BatchSampler::new(10, 7).next_batch(10);
        assert_eq!(BatchSampler::new(10, 7).next_batch(10), again);
    }
}
