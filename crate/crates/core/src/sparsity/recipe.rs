use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SparsityPattern;
use crate::{Error, Result};

/// Canonical SR-STE refining strength.
pub const DEFAULT_LAMBDA_W: f64 = 2e-4;
/// Starting multiplier for the geometric structure schedule.
pub const DEFAULT_K_GEO: usize = 16;

/// Which sparse training recipe drives the masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    Dense,
    SrSte,
    MdgfLinear,
    MdgfExp,
    SdgfStepwise,
    SdgfGeometric,
}

impl RecipeKind {
    pub const ALL: [RecipeKind; 6] = [
        RecipeKind::Dense,
        RecipeKind::SrSte,
        RecipeKind::MdgfLinear,
        RecipeKind::MdgfExp,
        RecipeKind::SdgfStepwise,
        RecipeKind::SdgfGeometric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecipeKind::Dense => "dense",
            RecipeKind::SrSte => "sr-ste",
            RecipeKind::MdgfLinear => "mdgf-linear",
            RecipeKind::MdgfExp => "mdgf-exp",
            RecipeKind::SdgfStepwise => "sdgf-stepwise",
            RecipeKind::SdgfGeometric => "sdgf-geometric",
        }
    }

    /// Mask-decay recipes: target pattern fixed, decay factor shrinks.
    pub fn is_mask_decay(self) -> bool {
        matches!(self, RecipeKind::MdgfLinear | RecipeKind::MdgfExp)
    }

    /// Structure-decay recipes: decay factor 0, pattern walks toward the target.
    pub fn is_structure_decay(self) -> bool {
        matches!(self, RecipeKind::SdgfStepwise | RecipeKind::SdgfGeometric)
    }
}

impl fmt::Display for RecipeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecipeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown recipe `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

fn default_k_geo() -> usize {
    DEFAULT_K_GEO
}

fn default_lambda_w() -> f64 {
    DEFAULT_LAMBDA_W
}

/// Recipe plus its rate parameters. Only the parameters relevant to `kind`
/// are ever read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub kind: RecipeKind,
    pub target: SparsityPattern,
    /// Per-step linear decay rate; defaults to `1 / decay_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_tau: Option<f64>,
    /// Per-step exponential decay rate; defaults to `ln(1e3) / decay_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_eta: Option<f64>,
    #[serde(default = "default_k_geo")]
    pub k_geo: usize,
    #[serde(default = "default_lambda_w")]
    pub lambda_w: f64,
}

impl RecipeConfig {
    pub fn new(kind: RecipeKind, target: SparsityPattern) -> Self {
        Self {
            kind,
            target,
            k_tau: None,
            k_eta: None,
            k_geo: DEFAULT_K_GEO,
            lambda_w: DEFAULT_LAMBDA_W,
        }
    }

    pub fn with_k_tau(mut self, k_tau: f64) -> Self {
        self.k_tau = Some(k_tau);
        self
    }

    pub fn with_k_eta(mut self, k_eta: f64) -> Self {
        self.k_eta = Some(k_eta);
        self
    }

    pub fn with_k_geo(mut self, k_geo: usize) -> Self {
        self.k_geo = k_geo;
        self
    }

    pub fn with_lambda_w(mut self, lambda_w: f64) -> Self {
        self.lambda_w = lambda_w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x >= 0.0 && x.is_finite()) => {
                Err(Error::Config(format!("recipe.{name} must be a finite nonnegative number, got {x}")))
            }
            _ => Ok(()),
        };
        nonneg("k_tau", self.k_tau)?;
        nonneg("k_eta", self.k_eta)?;
        nonneg("lambda_w", Some(self.lambda_w))?;
        if self.k_geo == 0 {
            return Err(Error::Config("recipe.k_geo must be positive".into()));
        }
        Ok(())
    }

    /// Fill unset decay rates from the decay-phase length `decay_steps`:
    /// `k_tau = 1/L` reaches 0 at the phase end and `k_eta = ln(1e3)/L`
    /// reaches 1e-3 there.
    pub fn resolved(&self, decay_steps: usize) -> Self {
        let len = decay_steps.max(1) as f64;
        let mut out = self.clone();
        if self.kind == RecipeKind::MdgfLinear {
            out.k_tau.get_or_insert(1.0 / len);
        }
        if self.kind == RecipeKind::MdgfExp {
            out.k_eta.get_or_insert(1e3f64.ln() / len);
        }
        out
    }
}

/// Decay factor `j` steps into the decay phase.
///
/// Linear: `max(1 − k_tau·j, 0)`. Exponential: `exp(−k_eta·j)`. Only defined
/// for the mask-decay recipes, and only once the relevant rate is set.
pub fn decay_factor(recipe: &RecipeConfig, j: usize) -> Result<f64> {
    let unresolved = |name: &str| {
        Error::Contract(format!("{name} is unset; call RecipeConfig::resolved first"))
    };
    match recipe.kind {
        RecipeKind::MdgfLinear => {
            let k = recipe.k_tau.ok_or_else(|| unresolved("k_tau"))?;
            let d = 1.0 - k * j as f64;
            // absorb the rounding of k_tau = 1/L so the phase end lands on exactly 0
            Ok(if d <= 4.0 * f64::EPSILON { 0.0 } else { d })
        }
        RecipeKind::MdgfExp => {
            let k = recipe.k_eta.ok_or_else(|| unresolved("k_eta"))?;
            Ok((-k * j as f64).exp())
        }
        other => Err(Error::Contract(format!(
            "decay factor is only defined for mask-decay recipes, not `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> SparsityPattern {
        SparsityPattern::new(1, 8).unwrap()
    }

    #[test]
    fn linear_decay_examples() {
        let r = RecipeConfig::new(RecipeKind::MdgfLinear, target()).with_k_tau(0.0002);
        assert_eq!(decay_factor(&r, 0).unwrap(), 1.0);
        assert_eq!(decay_factor(&r, 5000).unwrap(), 0.0);
        assert_eq!(decay_factor(&r, 9000).unwrap(), 0.0);
        assert!((decay_factor(&r, 2500).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exponential_decay_examples() {
        let r = RecipeConfig::new(RecipeKind::MdgfExp, target()).with_k_eta(1e-3);
        assert_eq!(decay_factor(&r, 0).unwrap(), 1.0);
        assert!((decay_factor(&r, 1000).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((decay_factor(&r, 1000).unwrap() - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn other_kinds_are_contract_violations() {
        for kind in [RecipeKind::Dense, RecipeKind::SrSte, RecipeKind::SdgfStepwise, RecipeKind::SdgfGeometric] {
            let r = RecipeConfig::new(kind, target());
            assert!(matches!(decay_factor(&r, 0), Err(Error::Contract(_))));
        }
        let unresolved = RecipeConfig::new(RecipeKind::MdgfExp, target());
        assert!(matches!(decay_factor(&unresolved, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn default_rates_scale_with_phase_length() {
        let lin = RecipeConfig::new(RecipeKind::MdgfLinear, target()).resolved(850);
        assert_eq!(decay_factor(&lin, 850).unwrap(), 0.0);
        assert!(decay_factor(&lin, 849).unwrap() > 0.0);

        let exp = RecipeConfig::new(RecipeKind::MdgfExp, target()).resolved(850);
        let end = decay_factor(&exp, 850).unwrap();
        assert!((end - 1e-3).abs() < 1e-15, "{end}");
        assert!(decay_factor(&exp, 851).unwrap() < 1e-3);

        // explicit rates survive resolution
        let fixed = RecipeConfig::new(RecipeKind::MdgfLinear, target()).with_k_tau(0.001).resolved(850);
        assert_eq!(fixed.k_tau, Some(0.001));
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in RecipeKind::ALL {
            assert_eq!(k.name().parse::<RecipeKind>().unwrap(), k);
        }
        assert!("mdgf".parse::<RecipeKind>().is_err());
    }
}
