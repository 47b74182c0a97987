//! Command-line front end: `train`, `cost` and `schedule`.
//!
//! Exit codes: 0 when everything requested succeeded, 1 when at least one
//! training run failed, 2 for invalid arguments or configuration.

mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::cost::{compute_cost, ff_sweep, training_flops, CostBreakdown, CostSpec, TrainingFlopsConfig};
use crate::data::generate;
use crate::models::{Classifier, GroupSelector, LayerGroupSelection};
use crate::sparsity::{
    decay_factor, geometric_schedule, interval_partition, stepwise_schedule, RecipeConfig, RecipeKind, SparsityPattern,
    DEFAULT_K_GEO,
};
use crate::train::{run_training, PhasePlan, SparsityController, TrainingReport};
use crate::{Error, Result};

pub use config::{ExperimentConfig, ModelConfig, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nm-decay", version, about = "N:M sparse training recipes and cost model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a recipe/seed sweep from a TOML config.
    Train(TrainArgs),
    /// Print FLOPs and parameter counts.
    Cost(CostArgs),
    /// Print the phase, stage and decay timeline of a recipe.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only this recipe (rates taken from the first configured recipe).
    #[arg(long)]
    pub recipe: Option<RecipeKind>,
    /// Target pattern for every recipe.
    #[arg(long)]
    pub pattern: Option<SparsityPattern>,
    /// Sparsified layer groups; repeatable.
    #[arg(long = "group")]
    pub groups: Vec<GroupSelector>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value = "vit-base")]
    pub preset: String,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Feed-forward density.
    #[arg(long, conflicts_with = "pattern")]
    pub sff: Option<f64>,
    #[arg(long)]
    pub pattern: Option<SparsityPattern>,
    /// Groups the pattern applies to; repeatable, default ff.
    #[arg(long = "group")]
    pub groups: Vec<GroupSelector>,
    /// Emit one row per FF pattern of the FLOPs table.
    #[arg(long, conflicts_with_all = ["sff", "pattern"])]
    pub table11: bool,
    #[arg(long)]
    pub csv: bool,
    /// Report total training GFLOPs for this recipe (needs --pattern and --steps).
    #[arg(long, requires_all = ["pattern", "steps"])]
    pub recipe: Option<RecipeKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub dense_fraction: f64,
    #[arg(long, default_value_t = 0.10)]
    pub finetune_fraction: f64,
    /// Forward+backward cost as a multiple of forward.
    #[arg(long, default_value_t = 3.0)]
    pub multiplier: f64,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub recipe: RecipeKind,
    #[arg(long)]
    pub pattern: SparsityPattern,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long = "k", default_value_t = DEFAULT_K_GEO)]
    pub k_geo: usize,
    #[arg(long)]
    pub k_tau: Option<f64>,
    #[arg(long)]
    pub k_eta: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub dense_fraction: f64,
    #[arg(long, default_value_t = 0.10)]
    pub finetune_fraction: f64,
    /// Rows of the decay-factor table for mask-decay recipes.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
}

/// Parse `args` (including the program name) and run, writing to `out` and `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Cost(a) => cmd_cost(&a, out),
        Command::Schedule(a) => cmd_schedule(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn run_file_name(recipe: &RecipeConfig, seed: u64) -> String {
    format!("{}_seed{seed}", recipe.kind)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every (recipe, seed) pair of the config. Config errors surface as
/// `Err`; failed runs are reported on `err` and reflected in the exit code.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        out: args.out.clone(),
        recipe: args.recipe,
        pattern: args.pattern,
        groups: args.groups.clone(),
        steps: args.steps,
    });
    cfg.validate()?;
    let resolved = cfg.resolved();
    let (train, eval) = generate(&cfg.data)?;
    // surface architecture and divisibility problems before any run starts
    for recipe in &cfg.recipes {
        let model = cfg.model.build(&cfg.data, cfg.seeds[0])?;
        let spec = cfg.train_spec(recipe, cfg.seeds[0])?;
        SparsityController::new(&spec.recipe, &spec.groups, &spec.plan, model.params())?;
    }
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("resolved_config.toml"), resolved.to_toml()?)?;

    let mut summary = csv::Writer::from_path(cfg.out.join("summary.csv"))?;
    summary.write_record(["recipe", "target", "groups", "runs", "failed", "mean_acc", "std_acc"])?;
    let mut failures = 0;
    for recipe in &cfg.recipes {
        let mut accs = Vec::new();
        let mut failed = 0;
        for &seed in &cfg.seeds {
            let name = run_file_name(recipe, seed);
            let outcome = (|| -> Result<TrainingReport> {
                let mut model = cfg.model.build(&cfg.data, seed)?;
                let report = run_training(&mut model, &cfg.train_spec(recipe, seed)?, &train, &eval)?;
                report.save_csv(&cfg.out.join(format!("{name}.csv")))?;
                if cfg.save_checkpoints {
                    model.save_checkpoint(&cfg.out.join(format!("{name}.ckpt")))?;
                }
                Ok(report)
            })();
            match outcome {
                Ok(report) => {
                    writeln!(out, "{name}: final eval accuracy {:.4}", report.final_eval.accuracy)?;
                    accs.push(report.final_eval.accuracy);
                }
                Err(e) => {
                    writeln!(err, "{name}: failed: {e}")?;
                    failed += 1;
                }
            }
        }
        failures += failed;
        let (mean, std) = if accs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&accs)
        };
        let groups: Vec<&str> = cfg.groups.iter().map(|g| g.name()).collect();
        summary.write_record([
            recipe.kind.to_string(),
            recipe.target.to_string(),
            groups.join("+"),
            cfg.seeds.len().to_string(),
            failed.to_string(),
            mean.to_string(),
            std.to_string(),
        ])?;
    }
    summary.flush()?;
    Ok(if failures == 0 { EXIT_OK } else { EXIT_RUN_FAILED })
}

/// Column names of cost output, in order.
pub const COST_COLUMNS: [&str; 22] = [
    "label",
    "density_ff",
    "density_q",
    "density_k",
    "density_v",
    "density_o",
    "flops_q",
    "flops_k",
    "flops_v",
    "flops_o",
    "flops_logit",
    "flops_attend",
    "flops_ff1",
    "flops_ff2",
    "flops_sa",
    "flops_ff",
    "flops_ff_sparse",
    "flops_total",
    "params_projections",
    "params_ff",
    "params_projections_m",
    "params_ff_m",
];

fn cost_fields(label: &str, s: &CostSpec, c: &CostBreakdown, precise: bool) -> Vec<String> {
    let f = |v: f64| if precise { v.to_string() } else { format!("{v:.4}") };
    let mut row = vec![label.to_string()];
    row.extend([s.density_ff, s.density_q, s.density_k, s.density_v, s.density_o].map(f));
    row.extend(
        [
            c.flops_q,
            c.flops_k,
            c.flops_v,
            c.flops_o,
            c.flops_logit,
            c.flops_attend,
            c.flops_ff1,
            c.flops_ff2,
            c.flops_sa,
            c.flops_ff,
            c.flops_ff_sparse,
            c.flops_total,
        ]
        .map(f),
    );
    row.push(c.params_projections.to_string());
    row.push(c.params_ff.to_string());
    row.push(f(c.params_projections_m));
    row.push(f(c.params_ff_m));
    row
}

fn write_rows(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>], csv_mode: bool) -> Result<()> {
    if csv_mode {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        return Ok(());
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn cost_spec(args: &CostArgs) -> Result<CostSpec> {
    let mut spec = match args.preset.as_str() {
        "vit-base" => CostSpec::vit_base(),
        other => return Err(Error::Config(format!("unknown preset `{other}`; expected vit-base"))),
    };
    spec.layers = args.layers.unwrap_or(spec.layers);
    spec.heads = args.heads.unwrap_or(spec.heads);
    spec.embed_dim = args.embed_dim.unwrap_or(spec.embed_dim);
    spec.ff_dim = args.ff_dim.unwrap_or(spec.ff_dim);
    spec.seq_len = args.seq_len.unwrap_or(spec.seq_len);
    Ok(spec)
}

pub fn cmd_cost(args: &CostArgs, out: &mut dyn Write) -> Result<i32> {
    let mut spec = cost_spec(args)?;
    let groups = if args.groups.is_empty() {
        vec![GroupSelector::Ff]
    } else {
        args.groups.clone()
    };

    if let Some(kind) = args.recipe {
        let pattern = args.pattern.expect("clap enforces --pattern");
        let plan = PhasePlan::new(
            args.steps.expect("clap enforces --steps"),
            args.dense_fraction,
            args.finetune_fraction,
        )?;
        let selection = LayerGroupSelection::uniform(&groups, pattern)?;
        let cfg = TrainingFlopsConfig {
            pass_multiplier: args.multiplier,
        };
        let total = training_flops(&spec, &RecipeConfig::new(kind, pattern), &plan, &selection, &cfg)?;
        let names: Vec<&str> = groups.iter().map(|g| g.name()).collect();
        let row = vec![
            kind.to_string(),
            pattern.to_string(),
            names.join("+"),
            plan.total_steps().to_string(),
            if args.csv { total.to_string() } else { format!("{total:.4}") },
        ];
        write_rows(out, &["recipe", "target", "groups", "total_steps", "training_gflops"], &[row], args.csv)?;
        return Ok(EXIT_OK);
    }

    let rows = if args.table11 {
        ff_sweep(&spec)?
            .into_iter()
            .map(|(p, c)| {
                let label = if p.is_dense() { "dense".to_string() } else { p.to_string() };
                let s = spec.clone().with_density_ff(p.density());
                cost_fields(&label, &s, &c, args.csv)
            })
            .collect()
    } else {
        let label = if let Some(p) = args.pattern {
            for &g in &groups {
                spec = spec.with_group(g, p);
            }
            p.to_string()
        } else {
            let sff = args.sff.unwrap_or(1.0);
            spec = spec.with_density_ff(sff);
            format!("sff={sff}")
        };
        let c = compute_cost(&spec)?;
        vec![cost_fields(&label, &spec, &c, args.csv)]
    };
    write_rows(out, &COST_COLUMNS, &rows, args.csv)?;
    Ok(EXIT_OK)
}

pub fn cmd_schedule(args: &ScheduleArgs, out: &mut dyn Write) -> Result<i32> {
    let plan = PhasePlan::new(args.steps, args.dense_fraction, args.finetune_fraction)?;
    let mut recipe = RecipeConfig::new(args.recipe, args.pattern).with_k_geo(args.k_geo);
    recipe.k_tau = args.k_tau;
    recipe.k_eta = args.k_eta;
    recipe.validate()?;
    let recipe = recipe.resolved(plan.decay_steps());
    let (d0, f0) = (plan.dense_steps(), plan.finetune_start());

    let stages = match recipe.kind {
        RecipeKind::SdgfStepwise => Some(stepwise_schedule(recipe.target)?),
        RecipeKind::SdgfGeometric => Some(geometric_schedule(recipe.target, recipe.k_geo)?),
        _ => None,
    };
    if let Some(stages) = &stages {
        if plan.decay_steps() < stages.len() {
            return Err(Error::Config(format!(
                "decay phase of {} steps cannot hold {} stages",
                plan.decay_steps(),
                stages.len()
            )));
        }
    }

    writeln!(out, "# {} {} over {} steps", recipe.kind, recipe.target, plan.total_steps())?;
    writeln!(out, "phase,start,end")?;
    writeln!(out, "dense,0,{d0}")?;
    writeln!(out, "decay,{d0},{f0}")?;
    writeln!(out, "finetune,{f0},{}", plan.total_steps())?;

    if let Some(stages) = stages {
        writeln!(out, "stage,pattern,start,end,decay_factor")?;
        let mut start = d0;
        for (i, (p, len)) in stages.iter().zip(interval_partition(plan.decay_steps(), stages.len())?).enumerate() {
            writeln!(out, "{i},{p},{start},{},0", start + len)?;
            start += len;
        }
    } else if recipe.kind.is_mask_decay() {
        // sampled over the decay phase, then the clamp to 0 at the fine-tune start
        writeln!(out, "step,decay_factor")?;
        let len = plan.decay_steps();
        let points = args.points.max(1);
        let mut js: Vec<usize> = (0..points).map(|i| i * len / points).filter(|&j| j < len).collect();
        js.dedup();
        for j in js {
            writeln!(out, "{},{}", d0 + j, decay_factor(&recipe, j)?)?;
        }
        if len > 0 {
            writeln!(out, "{},{}", d0 + len - 1, decay_factor(&recipe, len - 1)?)?;
        }
        writeln!(out, "{f0},0")?;
    }
    Ok(EXIT_OK)
}
