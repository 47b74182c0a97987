use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Training phase of a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Dense,
    Decay,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Dense => "dense",
            Phase::Decay => "decay",
            Phase::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_dense_fraction() -> f64 {
    0.05
}

fn default_finetune_fraction() -> f64 {
    0.10
}

/// Split of `total_steps` into dense, decay and fine-tune phases.
///
/// `dense_steps = round(total · dense_fraction)`,
/// `finetune_steps = round(total · finetune_fraction)` and the decay phase
/// takes the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    pub total_steps: usize,
    #[serde(default = "default_dense_fraction")]
    pub dense_fraction: f64,
    #[serde(default = "default_finetune_fraction")]
    pub finetune_fraction: f64,
}

impl PhasePlan {
    pub fn new(total_steps: usize, dense_fraction: f64, finetune_fraction: f64) -> Result<Self> {
        let plan = Self {
            total_steps,
            dense_fraction,
            finetune_fraction,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Default fractions 0.05 and 0.10.
    pub fn with_defaults(total_steps: usize) -> Result<Self> {
        Self::new(total_steps, default_dense_fraction(), default_finetune_fraction())
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("plan.total_steps must be positive".into()));
        }
        for (name, f) in [
            ("dense_fraction", self.dense_fraction),
            ("finetune_fraction", self.finetune_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("plan.{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.dense_steps() + self.finetune_steps() > self.total_steps {
            return Err(Error::Config(format!(
                "plan fractions {} + {} leave no room in {} steps",
                self.dense_fraction, self.finetune_fraction, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn dense_steps(&self) -> usize {
        (self.total_steps as f64 * self.dense_fraction).round() as usize
    }

    pub fn finetune_steps(&self) -> usize {
        (self.total_steps as f64 * self.finetune_fraction).round() as usize
    }

    pub fn decay_steps(&self) -> usize {
        self.total_steps - self.dense_steps() - self.finetune_steps()
    }

    pub fn steps_in(&self, phase: Phase) -> usize {
        match phase {
            Phase::Dense => self.dense_steps(),
            Phase::Decay => self.decay_steps(),
            Phase::Finetune => self.finetune_steps(),
        }
    }

    /// First step of the fine-tune phase.
    pub fn finetune_start(&self) -> usize {
        self.dense_steps() + self.decay_steps()
    }

    /// Phase of the 0-based `step`; steps past the end count as fine-tune.
    pub fn phase(&self, step: usize) -> Phase {
        if step < self.dense_steps() {
            Phase::Dense
        } else if step < self.finetune_start() {
            Phase::Decay
        } else {
            Phase::Finetune
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousand_step_split() {
        let p = PhasePlan::with_defaults(1000).unwrap();
        assert_eq!((p.dense_steps(), p.decay_steps(), p.finetune_steps()), (50, 850, 100));
        assert_eq!(p.phase(49), Phase::Dense);
        assert_eq!(p.phase(50), Phase::Decay);
        assert_eq!(p.phase(899), Phase::Decay);
        assert_eq!(p.phase(900), Phase::Finetune);
    }

    #[test]
    fn rejects_overfull_fractions() {
        assert!(PhasePlan::new(100, 0.6, 0.5).is_err());
        assert!(PhasePlan::new(0, 0.05, 0.1).is_err());
        assert!(PhasePlan::new(10, -0.1, 0.1).is_err());
        let p = PhasePlan::new(10, 0.5, 0.5).unwrap();
        assert_eq!(p.decay_steps(), 0);
    }
}
