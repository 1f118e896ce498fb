//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or domain error, 2 usage error. Every
//! artifact goes under `--out`; stdout carries the report path and one
//! summary line.

mod config;
mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{expand_config, parse_config};
pub use verify::{run_oracle_suite, OracleCheck, VerifyReport};

use crate::data::{
    load_activations, load_csv, save_activations, save_csv, DenseMatrix, ModelSpec, SplitSpec,
};
use crate::error::{Error, Result};
use crate::gates::{enumerate_arrangements, pattern_count_bound};
use crate::grelu::ZERO_BLOCK_NORM;
use crate::nonconvex::{extract_block_activations, Block, MLPNet};
use crate::pipeline::{
    default_block, distill_activations, frozen_checksum, load_block_student, prepare_seed,
    run_experiment, sample_budget_sweep_runs, swap_and_evaluate, Baselines, BlockMap, DataSource,
    DistillConfig, DistilledStudent, ExperimentConfig, ExperimentReport, ExperimentRun, GateKind,
    InPlaceBlock, SyntheticSpec,
};
use crate::polish::{
    build_polish_problem, compression_report, polish_lambda_max, prune_units, solve_group_elastic,
    PolishConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cvxdistill",
    version,
    about = "Convex gated-ReLU block distillation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a dense teacher on labelled data and save it with its data split.
    TeacherTrain(TeacherTrainArgs),
    /// Record the inputs and outputs of a teacher block as a CVXA file.
    Extract(ExtractArgs),
    /// Fit a convex student to recorded block activations.
    Distill(DistillArgs),
    /// Refit the second layer of a distilled student with a group elastic net.
    Polish(PolishArgs),
    /// Swap a student into the teacher and measure test accuracy.
    SwapEval(SwapEvalArgs),
    /// Convex student against non-convex and pruning baselines over seeds.
    Compare(CompareArgs),
    /// `compare` at several distillation sample budgets.
    Sweep(SweepArgs),
    /// Enumerate every activation pattern of a tiny data matrix.
    EnumerateGates(EnumerateArgs),
    /// Run the oracle self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key=value file; flags on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "CVXDISTILL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving every artifact.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Labelled training CSV (class id in the last column); synthetic data when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Labelled test CSV; without it `--train` is split.
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mean_scale: f64,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match &self.train {
            Some(train) => DataSource::Csv {
                train: train.clone(),
                test: self.test.clone(),
            },
            None => DataSource::Synthetic(SyntheticSpec {
                classes: self.classes,
                dim: self.dim,
                train_per_class: self.train_per_class,
                test_per_class: self.test_per_class,
                mean_scale: self.mean_scale,
            }),
        }
    }
}

#[derive(Debug, Args)]
pub struct BlockArgs {
    /// First layer of the replaced block; defaults to the two layers before the head.
    #[arg(long, requires = "block_end")]
    pub block_start: Option<usize>,
    /// One past the last layer of the replaced block.
    #[arg(long, requires = "block_start")]
    pub block_end: Option<usize>,
}

impl BlockArgs {
    fn resolve(&self, net: &MLPNet<f64>) -> Result<Block> {
        let block = match (self.block_start, self.block_end) {
            (Some(s), Some(e)) => Block::new(s, e),
            _ => default_block(net.depth()),
        };
        block.validate(net)?;
        Ok(block)
    }

    fn explicit(&self) -> Option<Block> {
        Some(Block::new(self.block_start?, self.block_end?))
    }
}

#[derive(Debug, Args)]
pub struct DistillFlags {
    /// Gates sampled before deduplication; defaults to a size-based formula.
    #[arg(long)]
    pub gates: Option<usize>,
    #[arg(long, default_value = "gaussian", value_parser = parse_gate_kind)]
    pub gate_kind: GateKind,
    #[arg(long, default_value_t = 10)]
    pub lambda_points: usize,
    #[arg(long, default_value_t = 3.0)]
    pub lambda_decades: f64,
    #[arg(long, default_value_t = 0.1)]
    pub holdout_fraction: f64,
    /// Iteration cap per path point.
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Iterate on the Gram matrix when it fits in memory.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub gram: bool,
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub polish: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub polish_lambda_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    pub polish_alpha: f64,
    /// Cap on the student's nonzero weights.
    #[arg(long)]
    pub max_params: Option<usize>,
}

impl DistillFlags {
    fn config(&self, seed: u64) -> DistillConfig {
        let mut cfg = DistillConfig {
            gates: self.gates,
            gate_kind: self.gate_kind,
            lambda_points: self.lambda_points,
            lambda_decades: self.lambda_decades,
            holdout_fraction: self.holdout_fraction,
            polish: self.polish,
            polish_lambda_ratio: self.polish_lambda_ratio,
            max_params: self.max_params,
            seed,
            ..DistillConfig::default()
        };
        cfg.solver.max_iters = self.max_iters;
        cfg.solver.tol_grad_map = self.tol;
        cfg.solver.tol_rel_obj = self.tol;
        cfg.solver.gram = self.gram;
        cfg.solver.seed = seed;
        cfg.polish_config.alpha = self.polish_alpha;
        cfg.polish_config.max_iters = self.max_iters;
        cfg.polish_config.tol_grad_map = self.tol;
        cfg.polish_config.tol_rel_obj = self.tol;
        cfg.polish_config.seed = seed;
        cfg
    }
}

fn parse_gate_kind(s: &str) -> std::result::Result<GateKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TeacherTrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16,256,16")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub block: BlockArgs,
    /// Teacher model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of inputs.
    #[arg(long)]
    pub data: PathBuf,
    /// Whether the CSV's last column is a class id (it is dropped either way).
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub labels: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub distill: DistillFlags,
    /// CVXA activation file.
    #[arg(long)]
    pub acts: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolishArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Distilled student model JSON.
    #[arg(long)]
    pub student: PathBuf,
    /// CVXA activations to refit on.
    #[arg(long)]
    pub acts: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Penalty as a fraction of the smallest all-zero penalty.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_ratio: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SwapEvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    /// Labelled test CSV.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub block: BlockArgs,
    #[command(flatten)]
    pub distill: DistillFlags,
    /// Comma-separated seeds; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', default_value = "16,256,16")]
    pub teacher_hidden: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub teacher_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub teacher_lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub student_lr: f64,
    /// Non-convex wall-time budget as a multiple of the convex time.
    #[arg(long, default_value_t = 1.1)]
    pub time_budget_factor: f64,
    /// Fixed epoch budget for the non-convex student instead of matched time.
    #[arg(long)]
    pub nonconvex_epochs: Option<usize>,
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub nonconvex: bool,
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub prune: bool,
}

impl ExperimentArgs {
    fn config(&self, common: &CommonArgs, samples_per_class: Option<usize>) -> ExperimentConfig {
        ExperimentConfig {
            data: self.data.source(),
            split: SplitSpec {
                train_fraction: self.data.train_fraction,
                seed: 0,
                samples_per_class,
            },
            teacher_hidden: self.teacher_hidden.clone(),
            teacher_epochs: self.teacher_epochs,
            teacher_lr: self.teacher_lr,
            block: self.block.explicit(),
            distill: self.distill.config(common.seed),
            baselines: Baselines {
                nonconvex: self.nonconvex,
                prune: self.prune,
            },
            student_lr: self.student_lr,
            time_budget_factor: self.time_budget_factor,
            nonconvex_epochs: self.nonconvex_epochs,
            seeds: self.seeds.clone().unwrap_or_else(|| vec![common.seed]),
            jobs: common.jobs,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Rows per class used for distillation; all rows when absent.
    #[arg(long)]
    pub samples_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated samples-per-class budgets.
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV of rows to enumerate; a seeded Gaussian matrix when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub labels: bool,
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fewer instances and restarts.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub tiny: bool,
}

/// What a command reports on stdout.
struct Outcome {
    report: PathBuf,
    summary: String,
    ok: bool,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    run(cli.command)
}

pub fn run(command: Command) -> i32 {
    match dispatch(command) {
        Ok(out) => {
            println!("{}", out.report.display());
            println!("{}", out.summary);
            if out.ok {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::TeacherTrain(a) => teacher_train(a),
        Command::Extract(a) => extract(a),
        Command::Distill(a) => distill(a),
        Command::Polish(a) => polish(a),
        Command::SwapEval(a) => swap_eval(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => sweep(a),
        Command::EnumerateGates(a) => enumerate(a),
        Command::Verify(a) => verify(a),
    }
}

fn out_dir(common: &CommonArgs) -> Result<&Path> {
    let dir = common.out.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn load_teacher(path: &Path) -> Result<MLPNet<f64>> {
    MLPNet::from_layer_specs(&ModelSpec::load(path)?.layers)
}

fn save_net(net: &MLPNet<f64>, path: &Path) -> Result<()> {
    ModelSpec::new(net.input_dim(), net.to_layer_specs())?.save(path)
}

fn load_distilled(path: &Path) -> Result<DistilledStudent> {
    let spec = ModelSpec::load(path)?;
    match spec.layers.as_slice() {
        [layer] => DistilledStudent::from_layer_spec(layer),
        _ => Err(Error::InvalidArgument(format!(
            "{} is not a distilled student model",
            path.display()
        ))),
    }
}

fn accuracy(logits: &DenseMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Serialize)]
struct TeacherReport {
    seed: u64,
    widths: Vec<usize>,
    weights: usize,
    train_rows: usize,
    test_rows: usize,
    train_accuracy: f64,
    test_accuracy: f64,
    wall_ms: f64,
}

fn teacher_train(a: TeacherTrainArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let cfg = ExperimentConfig {
        data: a.data.source(),
        split: SplitSpec {
            train_fraction: a.data.train_fraction,
            ..SplitSpec::default()
        },
        teacher_hidden: a.hidden.clone(),
        teacher_epochs: a.epochs,
        teacher_lr: a.lr,
        seeds: vec![a.common.seed],
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let start = Instant::now();
    let ctx = prepare_seed(&cfg, a.common.seed)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let test_logits = ctx.teacher.forward(&ctx.test.x.cast())?;
    let labels = ctx.test.labels().ok_or(Error::MissingLabels)?;
    let report = TeacherReport {
        seed: a.common.seed,
        widths: ctx.teacher.widths(),
        weights: ctx.teacher.weight_count(),
        train_rows: ctx.train.len(),
        test_rows: ctx.test.len(),
        train_accuracy: ctx.teacher_train_accuracy,
        test_accuracy: accuracy(&test_logits, labels),
        wall_ms,
    };
    save_net(&ctx.teacher, &dir.join("teacher.json"))?;
    save_csv(&ctx.train, dir.join("train.csv"))?;
    save_csv(&ctx.test, dir.join("test.csv"))?;
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "teacher {:?}: train accuracy {:.4}, test accuracy {:.4}",
            report.widths, report.train_accuracy, report.test_accuracy
        ),
        ok: true,
    })
}

#[derive(Serialize)]
struct ExtractReport {
    block: Block,
    rows: usize,
    input_dim: usize,
    output_dim: usize,
    checksum: String,
}

fn extract(a: ExtractArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let teacher = load_teacher(&a.model)?;
    let block = a.block.resolve(&teacher)?;
    let ds = load_csv(&a.data, a.labels)?.without_labels();
    let acts = extract_block_activations(&teacher, &ds, block)?;
    save_activations(&acts, dir.join("acts.cvxa"))?;
    let report = ExtractReport {
        block,
        rows: acts.len(),
        input_dim: acts.input_dim(),
        output_dim: acts.output_dim(),
        checksum: frozen_checksum(&teacher, block),
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "extracted {} rows of block {}..{} ({} -> {})",
            report.rows, block.start, block.end, report.input_dim, report.output_dim
        ),
        ok: true,
    })
}

#[derive(Serialize)]
struct DistillReport {
    config: DistillConfig,
    gate_count: usize,
    train_rows: usize,
    holdout_rows: usize,
    path: Vec<crate::pipeline::PathPoint>,
    selected: usize,
    polished: bool,
    hidden: usize,
    params: usize,
    holdout_mse: f64,
    train_mse: f64,
    wall_ms: f64,
}

fn distill(a: DistillArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let acts = load_activations(&a.acts)?;
    let cfg = a.distill.config(a.common.seed);
    let start = Instant::now();
    let d = distill_activations(&acts, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let train_mse = d
        .student
        .map(&acts.z.cast())?
        .mean_squared_error(&acts.t.cast());
    d.student.to_model_spec()?.save(dir.join("student.json"))?;
    d.trace.write_jsonl(dir.join("trace.jsonl"))?;
    if let Some(t) = &d.polish_trace {
        t.write_jsonl(dir.join("polish_trace.jsonl"))?;
    }
    let report = DistillReport {
        config: cfg,
        gate_count: d.gate_count,
        train_rows: d.train_rows,
        holdout_rows: d.holdout_rows,
        selected: d.selected,
        polished: d.polished,
        hidden: d.student.net.hidden(),
        params: d.student.effective_params(),
        holdout_mse: d.holdout_mse,
        train_mse,
        wall_ms,
        path: d.path,
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "student: {} units, {} params, lambda {:.3e}, held-out mse {:.6}",
            report.hidden, report.params, report.path[report.selected].lambda, report.holdout_mse
        ),
        ok: true,
    })
}

#[derive(Serialize)]
struct PolishReport {
    config: PolishConfig,
    initial_objective: f64,
    objective: f64,
    stop: crate::solver::StopReason,
    hidden_before: usize,
    hidden_after: usize,
    params_before: usize,
    params_after: usize,
    mse_before: f64,
    mse_after: f64,
}

fn polish(a: PolishArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let student = load_distilled(&a.student)?;
    let acts = load_activations(&a.acts)?;
    let z: DenseMatrix<f64> = acts.z.cast();
    let t: DenseMatrix<f64> = acts.t.cast();
    let x = student.lift.apply(&z)?;
    let prob = build_polish_problem(&student.net, &x, &t)?;
    let cfg = PolishConfig {
        alpha: a.alpha,
        lambda: a.lambda_ratio * polish_lambda_max(&prob),
        max_iters: a.max_iters,
        tol_grad_map: a.tol,
        tol_rel_obj: a.tol,
        seed: a.common.seed,
    };
    let res = solve_group_elastic(&prob, &cfg)?;
    let refit = DistilledStudent::new(
        student.lift.clone(),
        prune_units(&student.net, &res.beta, &res.intercept, ZERO_BLOCK_NORM)?,
    )?;
    refit.to_model_spec()?.save(dir.join("student.json"))?;
    res.trace.write_jsonl(dir.join("trace.jsonl"))?;
    let report = PolishReport {
        config: cfg,
        initial_objective: res.initial_objective,
        objective: res.objective,
        stop: res.stop,
        hidden_before: student.net.hidden(),
        hidden_after: refit.net.hidden(),
        params_before: student.effective_params(),
        params_after: refit.effective_params(),
        mse_before: student.map(&z)?.mean_squared_error(&t),
        mse_after: refit.map(&z)?.mean_squared_error(&t),
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "polish: objective {:.6e} -> {:.6e}, units {} -> {}, mse {:.6} -> {:.6}",
            report.initial_objective,
            report.objective,
            report.hidden_before,
            report.hidden_after,
            report.mse_before,
            report.mse_after
        ),
        ok: true,
    })
}

#[derive(Serialize)]
struct SwapReport {
    block: Block,
    accuracy: f64,
    teacher_accuracy: f64,
    checksum: String,
    block_params: usize,
    student_params: Option<usize>,
    block_sparsity: Option<f64>,
    overall_sparsity: Option<f64>,
}

fn swap_eval(a: SwapEvalArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let teacher = load_teacher(&a.teacher)?;
    let block = a.block.resolve(&teacher)?;
    let spec = ModelSpec::load(&a.student)?;
    let student = load_block_student(&spec)?;
    let test = load_csv(&a.data, true)?;
    let res = swap_and_evaluate(&teacher, block, student.as_ref(), &test)?;
    let reference = swap_and_evaluate(
        &teacher,
        block,
        &InPlaceBlock {
            net: &teacher,
            block,
        },
        &test,
    )?;
    let student_params = match spec.layers.as_slice() {
        [layer] => DistilledStudent::from_layer_spec(layer)
            .ok()
            .map(|s| s.effective_params()),
        layers => MLPNet::<f64>::from_layer_specs(layers)
            .ok()
            .map(|n| n.nonzero_weights()),
    };
    let block_params = block.weight_count(&teacher);
    let compression = student_params
        .map(|p| compression_report(block_params as u64, p as u64, teacher.weight_count() as u64))
        .transpose()?;
    let report = SwapReport {
        block,
        accuracy: res.accuracy,
        teacher_accuracy: reference.accuracy,
        checksum: res.checksum,
        block_params,
        student_params,
        block_sparsity: compression.map(|c| c.block_sparsity),
        overall_sparsity: compression.map(|c| c.overall_sparsity),
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "swapped accuracy {:.4} (teacher {:.4})",
            report.accuracy, report.teacher_accuracy
        ),
        ok: true,
    })
}

fn write_run(dir: &Path, run: &ExperimentRun) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("report.csv"), &run.report.to_csv())?;
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    for t in &run.traces {
        t.convex
            .write_jsonl(traces.join(format!("seed-{}-convex.jsonl", t.seed)))?;
        if let Some(p) = &t.polish {
            p.write_jsonl(traces.join(format!("seed-{}-polish.jsonl", t.seed)))?;
        }
        let mut lines = String::new();
        for r in &t.nonconvex {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        write_text(
            &traces.join(format!("seed-{}-nonconvex.jsonl", t.seed)),
            &lines,
        )?;
    }
    let path = dir.join("report.json");
    write_text(&path, &run.report.to_json())?;
    Ok(path)
}

fn method_summary(report: &ExperimentReport) -> String {
    let parts: Vec<String> = report
        .aggregates
        .iter()
        .map(|a| {
            format!(
                "{} acc {:.4} mse {:.4} params {:.0}",
                a.method,
                a.end_to_end_accuracy.mean,
                a.activation_mse.mean,
                a.params_effective.mean
            )
        })
        .collect();
    parts.join("; ")
}

fn compare(a: CompareArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let cfg = a.experiment.config(&a.common, a.samples_per_class);
    write_json(&dir.join("config.json"), &cfg)?;
    let run = run_experiment(&cfg)?;
    let path = write_run(dir, &run)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "{} seeds: {}",
            run.report.seeds.len(),
            method_summary(&run.report)
        ),
        ok: true,
    })
}

fn sweep(a: SweepArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let cfg = a.experiment.config(&a.common, None);
    write_json(&dir.join("config.json"), &cfg)?;
    let runs = sample_budget_sweep_runs(&cfg, &a.budgets)?;
    let mut summary = Vec::new();
    for (b, run) in a.budgets.iter().zip(&runs) {
        write_run(&dir.join(format!("spc-{b}")), run)?;
        summary.push(format!("spc {b}: {}", method_summary(&run.report)));
    }
    let reports: Vec<&ExperimentReport> = runs.iter().map(|r| &r.report).collect();
    let path = dir.join("report.json");
    write_json(&path, &reports)?;
    Ok(Outcome {
        report: path,
        summary: summary.join(" | "),
        ok: true,
    })
}

#[derive(Serialize)]
struct GatesReport {
    n: usize,
    d: usize,
    rank_bound: u128,
    count: usize,
    /// One 0/1 string per pattern, sample order.
    patterns: Vec<String>,
    /// Witness direction of each pattern.
    directions: Vec<Vec<f64>>,
}

fn enumerate(a: EnumerateArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let x: DenseMatrix<f64> = match &a.data {
        Some(p) => load_csv(p, a.labels)?.x.cast(),
        None => {
            let mut r = crate::data::rng::seeded(a.common.seed);
            DenseMatrix::new(
                a.n,
                a.d,
                crate::data::rng::normal_vec(&mut r, a.n * a.d, 1.0),
            )?
        }
    };
    let gates = enumerate_arrangements(&x, a.common.seed)?;
    let (n, d) = x.shape();
    let report = GatesReport {
        n,
        d,
        rank_bound: pattern_count_bound(n, d),
        count: gates.len(),
        patterns: gates
            .patterns()
            .iter()
            .map(|p| {
                p.mask()
                    .iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect()
            })
            .collect(),
        directions: gates
            .gates()
            .iter()
            .map(|g| g.direction().to_vec())
            .collect(),
    };
    let path = dir.join("gates.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        report: path,
        summary: format!(
            "{} patterns for n={n}, d={d} (bound {})",
            report.count, report.rank_bound
        ),
        ok: true,
    })
}

fn verify(a: VerifyArgs) -> Result<Outcome> {
    let dir = out_dir(&a.common)?;
    let report = run_oracle_suite(a.tiny, a.common.seed)?;
    let path = dir.join("verify.json");
    write_json(&path, &report)?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let summary = if failed.is_empty() {
        format!("verify: all {} checks passed", report.checks.len())
    } else {
        format!("verify: FAILED {}", failed.join(", "))
    };
    if !failed.is_empty() {
        eprintln!("{summary}");
    }
    Ok(Outcome {
        report: path,
        summary,
        ok: report.passed,
    })
}
