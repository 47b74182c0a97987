//! Three-phase sparse training: dense warm-up, decay towards the target N:M
//! pattern, then fine-tuning under a frozen mask.

mod controller;
mod diagnostics;
mod optim;
mod plan;
mod trainer;

pub use controller::{LayerMask, Regime, SparsityController, SNAP_THRESHOLD};
pub use diagnostics::{abs_variance, variance, DiagnosticsConfig, LayerDiagnostics, NoiseDiagnostics};
pub use optim::{clip_global_norm, AdamW, LrSchedule, OptimizerConfig};
pub use plan::{Phase, PhasePlan};
pub use trainer::{
    evaluate, run_training, EvalResult, LogRow, LoopConfig, RegimeSegment, SparsityAudit, TrainSpec,
    TrainingReport, CSV_SCHEMA_LINE,
};
