use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::models::{build_mlp, build_tiny_vit, GroupSelector, LayerGroupSelection, Model, TinyTransformerConfig};
use crate::sparsity::{RecipeConfig, RecipeKind, SparsityPattern};
use crate::train::{DiagnosticsConfig, LoopConfig, OptimizerConfig, PhasePlan, TrainSpec};
use crate::{Error, Result};

/// Architecture section; input and output widths come from `[data]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Transformer {
        layers: usize,
        heads: usize,
        embed_dim: usize,
        ff_dim: usize,
    },
    Mlp {
        hidden: Vec<usize>,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TinyTransformerConfig::default();
        ModelConfig::Transformer {
            layers: t.layers,
            heads: t.heads,
            embed_dim: t.embed_dim,
            ff_dim: t.ff_dim,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, data: &SyntheticSpec, seed: u64) -> Result<Model> {
        match self {
            &ModelConfig::Transformer {
                layers,
                heads,
                embed_dim,
                ff_dim,
            } => {
                let cfg = TinyTransformerConfig {
                    layers,
                    heads,
                    embed_dim,
                    ff_dim,
                    seq_len: data.seq_len,
                    token_dim: data.token_dim,
                    num_classes: data.num_classes,
                };
                Ok(Model::Transformer(build_tiny_vit(&cfg, seed)?))
            }
            ModelConfig::Mlp { hidden } => {
                let mut dims = vec![data.seq_len * data.token_dim];
                dims.extend(hidden);
                dims.push(data.num_classes);
                Ok(Model::Mlp(build_mlp(&dims, seed)?))
            }
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_groups() -> Vec<GroupSelector> {
    vec![GroupSelector::Ff]
}

fn default_recipes() -> Vec<RecipeConfig> {
    vec![RecipeConfig::new(RecipeKind::Dense, SparsityPattern::new(1, 1).expect("1:1 is valid"))]
}

/// A sweep over recipes and seeds sharing model, data, plan and optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Layer groups sparsified at each recipe's target pattern.
    #[serde(default = "default_groups")]
    pub groups: Vec<GroupSelector>,
    /// Also write a final-model checkpoint per run.
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: SyntheticSpec,
    pub plan: PhasePlan,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub train: LoopConfig,
    #[serde(default = "default_recipes")]
    pub recipes: Vec<RecipeConfig>,
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub recipe: Option<RecipeKind>,
    pub pattern: Option<SparsityPattern>,
    pub groups: Vec<GroupSelector>,
    pub steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(kind) = o.recipe {
            let template = self.recipes.first().cloned().unwrap_or_else(|| default_recipes().remove(0));
            self.recipes = vec![RecipeConfig { kind, ..template }];
        }
        if let Some(p) = o.pattern {
            self.recipes.iter_mut().for_each(|r| r.target = p);
        }
        if !o.groups.is_empty() {
            self.groups = o.groups.clone();
        }
        if let Some(steps) = o.steps {
            self.plan.total_steps = steps;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.recipes.is_empty() {
            return Err(Error::Config("recipes must list at least one recipe".into()));
        }
        self.data.validate()?;
        self.plan.validate()?;
        self.optimizer.validate()?;
        self.diagnostics.validate()?;
        self.train.validate()?;
        for r in &self.recipes {
            r.validate()?;
        }
        LayerGroupSelection::uniform(&self.groups, SparsityPattern::new(1, 1)?)?;
        Ok(())
    }

    /// Config echoed to the output directory: decay rates filled in from the plan.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.recipes {
            *r = r.resolved(self.plan.decay_steps());
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_spec(&self, recipe: &RecipeConfig, seed: u64) -> Result<TrainSpec> {
        Ok(TrainSpec {
            recipe: recipe.clone(),
            groups: LayerGroupSelection::uniform(&self.groups, recipe.target)?,
            plan: self.plan,
            optimizer: self.optimizer.clone(),
            diagnostics: self.diagnostics.clone(),
            looping: self.train.clone(),
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
out = "runs/x"
seeds = [0, 1]

[model]
kind = "mlp"
hidden = [32]

[plan]
total_steps = 200

[[recipes]]
kind = "mdgf-exp"
target = "1:8"

[[recipes]]
kind = "sr-ste"
target = "1:8"
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model, ModelConfig::Mlp { hidden: vec![32] });
        assert_eq!(cfg.plan.dense_fraction, 0.05);
        assert_eq!(cfg.recipes.len(), 2);
        assert_eq!(cfg.groups, vec![GroupSelector::Ff]);
        assert_eq!(cfg.data, SyntheticSpec::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap().resolved();
        assert!(cfg.recipes[0].k_eta.is_some());
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = ExperimentConfig::from_toml("[plan]\ntotal_steps = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml("[plan]\ntotal_steps = 10\n[[recipes]]\nkind = \"x\"\ntarget = \"1:4\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("unknown variant"), "{err}");
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            recipe: Some(RecipeKind::SdgfStepwise),
            pattern: Some(SparsityPattern::new(1, 4).unwrap()),
            groups: vec![GroupSelector::Qkv],
            ..Default::default()
        });
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.recipes.len(), 1);
        assert_eq!(cfg.recipes[0].kind, RecipeKind::SdgfStepwise);
        assert_eq!(cfg.recipes[0].target.to_string(), "1:4");
        assert_eq!(cfg.groups, vec![GroupSelector::Qkv]);
    }
}
