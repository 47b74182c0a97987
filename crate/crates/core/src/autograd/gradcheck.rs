//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it is used to check.

use super::{Graph, Tensor, Var};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum relative error where the numeric gradient is not tiny.
    pub rel_tol: f64,
    /// Maximum absolute error where the numeric gradient is tiny.
    pub abs_tol: f64,
    /// Below this magnitude the absolute criterion applies.
    pub tiny: f64,
    /// Check at most this many elements per input (evenly strided); `None` checks all.
    pub max_per_input: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            tiny: 1e-4,
            max_per_input: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare the analytic gradient of the scalar `f(inputs)` against central
/// differences, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        let len = inputs[which].len();
        let stride = match cfg.max_per_input {
            Some(limit) if limit > 0 && limit < len => len.div_ceil(limit),
            _ => 1,
        };
        for index in (0..len).step_by(stride) {
            let orig = inputs[which].data()[index];
            work[which].data_mut()[index] = orig + cfg.step;
            let plus = eval(&work)?;
            work[which].data_mut()[index] = orig - cfg.step;
            let minus = eval(&work)?;
            work[which].data_mut()[index] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grads[index];
            let abs_err = (a - numeric).abs();
            let ok = if numeric.abs() < cfg.tiny {
                abs_err < cfg.abs_tol
            } else {
                let rel = abs_err / a.abs().max(numeric.abs());
                report.max_rel_error = report.max_rel_error.max(rel);
                rel < cfg.rel_tol
            };
            report.max_abs_error = report.max_abs_error.max(abs_err);
            report.checked += 1;
            if !ok {
                report.failures.push(Mismatch {
                    input: which,
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
