//! End-to-end experiments: teacher training, label-free block distillation,
//! block swap evaluation and matched-budget comparison with baselines.

pub mod distill;
pub mod experiment;
pub mod student;
pub mod swap;
pub mod synthetic;

pub use distill::{
    distill_activations, distill_block, prepare_design, DistillConfig, DistillDesign, Distillation,
    GateKind, PathPoint,
};
pub use experiment::{
    compare_methods, default_block, load_data, prepare_seed, run_experiment, run_seed,
    sample_budget_sweep, sample_budget_sweep_runs, Aggregate, Baselines, DataSource,
    ExperimentConfig, ExperimentReport, ExperimentRun, MethodRow, SeedContext, SeedInfo,
    SeedTraces, Summary, WIDTH_RULE,
};
pub use student::{
    load_block_student, BlockMap, DistilledStudent, InPlaceBlock, InputLift, ZeroBlock,
};
pub use swap::{frozen_checksum, swap_and_evaluate, swapped_logits, SwapResult};
pub use synthetic::{gaussian_mixture, SyntheticSpec};
