use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unbiased variance (divisor `n − 1`); 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Variance of `|g|` across the elements of `values`.
pub fn abs_variance(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    variance(&abs)
}

fn d_ema() -> f64 {
    0.99
}
fn d_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Weight of the previous EMA value.
    #[serde(default = "d_ema")]
    pub ema: f64,
    /// Sample on steps divisible by this.
    #[serde(default = "d_every")]
    pub every: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            ema: d_ema(),
            every: d_every(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema) || self.every == 0 {
            return Err(Error::Config(format!(
                "diagnostics.ema must lie in [0, 1) and diagnostics.every be positive, got {} and {}",
                self.ema, self.every
            )));
        }
        Ok(())
    }

    pub fn is_sampling_step(&self, step: usize) -> bool {
        step % self.every == 0
    }
}

/// EMAs for one tracked weight tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub name: String,
    pub param_index: usize,
    pub samples: usize,
    pub grad_var_ema: Option<f64>,
    pub second_moment_var_ema: Option<f64>,
}

/// Running averages of element-wise dispersion for tracked layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDiagnostics {
    cfg: DiagnosticsConfig,
    layers: Vec<LayerDiagnostics>,
}

impl NoiseDiagnostics {
    /// Track the parameters `(index, name)`.
    pub fn new(cfg: DiagnosticsConfig, tracked: Vec<(usize, String)>) -> Self {
        Self {
            cfg,
            layers: tracked
                .into_iter()
                .map(|(param_index, name)| LayerDiagnostics {
                    name,
                    param_index,
                    samples: 0,
                    grad_var_ema: None,
                    second_moment_var_ema: None,
                })
                .collect(),
        }
    }

    pub fn config(&self) -> &DiagnosticsConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[LayerDiagnostics] {
        &self.layers
    }

    /// Fold one sample per tracked layer; `grads` and `second_moments` are
    /// indexed by parameter. The first sample initialises each EMA.
    pub fn sample(&mut self, grads: &[Vec<f64>], second_moments: &[Vec<f64>]) {
        let beta = self.cfg.ema;
        let fold = |ema: Option<f64>, x: f64| Some(ema.map_or(x, |e| beta * e + (1.0 - beta) * x));
        for layer in &mut self.layers {
            let g = abs_variance(&grads[layer.param_index]);
            let v = variance(&second_moments[layer.param_index]);
            layer.grad_var_ema = fold(layer.grad_var_ema, g);
            layer.second_moment_var_ema = fold(layer.second_moment_var_ema, v);
            layer.samples += 1;
        }
    }

    /// Mean over tracked layers of the gradient-variance EMA.
    pub fn mean_grad_var(&self) -> Option<f64> {
        mean(self.layers.iter().map(|l| l.grad_var_ema))
    }

    /// Mean over tracked layers of the second-moment-variance EMA.
    pub fn mean_second_moment_var(&self) -> Option<f64> {
        mean(self.layers.iter().map(|l| l.second_moment_var_ema))
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    match v {
        Some(v) if !v.is_empty() => Some(v.iter().sum::<f64>() / v.len() as f64),
        _ => None,
    }
}
