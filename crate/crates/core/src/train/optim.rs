use serde::{Deserialize, Serialize};

use crate::models::Param;
use crate::{Error, Result};

fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_weight_decay() -> f64 {
    0.05
}
fn d_warmup() -> f64 {
    0.03
}
fn d_min_ratio() -> f64 {
    0.1
}

/// AdamW hyperparameters and learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Peak learning rate.
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    /// Fraction of steps spent in linear warmup.
    #[serde(default = "d_warmup")]
    pub warmup_fraction: f64,
    /// Final learning rate as a fraction of the peak.
    #[serde(default = "d_min_ratio")]
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; off when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            weight_decay: d_weight_decay(),
            warmup_fraction: d_warmup(),
            min_lr_ratio: d_min_ratio(),
            grad_clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("optimizer.{name} is out of range: {v}")))
            }
        };
        check("lr", self.lr > 0.0 && self.lr.is_finite(), self.lr)?;
        check("beta1", (0.0..1.0).contains(&self.beta1), self.beta1)?;
        check("beta2", (0.0..1.0).contains(&self.beta2), self.beta2)?;
        check("eps", self.eps > 0.0, self.eps)?;
        check("weight_decay", self.weight_decay >= 0.0, self.weight_decay)?;
        check("warmup_fraction", (0.0..=1.0).contains(&self.warmup_fraction), self.warmup_fraction)?;
        check("min_lr_ratio", (0.0..=1.0).contains(&self.min_lr_ratio), self.min_lr_ratio)?;
        if let Some(c) = self.grad_clip {
            check("grad_clip", c > 0.0, c)?;
        }
        Ok(())
    }
}

/// Linear warmup to the peak, then cosine decay to `min_lr_ratio · peak`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    peak: f64,
    min: f64,
    warmup_steps: usize,
    total_steps: usize,
}

impl LrSchedule {
    pub fn new(cfg: &OptimizerConfig, total_steps: usize) -> Self {
        Self {
            peak: cfg.lr,
            min: cfg.lr * cfg.min_lr_ratio,
            warmup_steps: (total_steps as f64 * cfg.warmup_fraction).round() as usize,
            total_steps,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    /// Learning rate for the 0-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.min + (self.peak - self.min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW moments for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    cfg: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, params: &[Param]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            cfg,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update at learning rate `lr`. Decoupled weight decay
    /// `w ← w − lr·λ·w` applies only to parameters flagged for it.
    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.value.len() != g.len() || self.m[i].len() != g.len() {
                return Err(Error::Shape {
                    op: "adamw",
                    lhs: p.value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.t += 1;
        let OptimizerConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let decay = if p.weight_decay { lr * weight_decay } else { 0.0 };
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= decay * *w + lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
