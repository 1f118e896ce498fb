use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distill::{distill_block, DistillConfig};
use super::student::{BlockMap, InPlaceBlock};
use super::swap::swap_and_evaluate;
use super::synthetic::{gaussian_mixture, SyntheticSpec};
use crate::data::{
    load_csv, subsample_per_class, train_test_split, Dataset, DenseMatrix, SplitSpec,
};
use crate::error::{Error, Result};
use crate::nonconvex::{
    extract_block_activations, magnitude_prune, train_relu_student, train_teacher,
    width_for_budget, Block, Budget, MLPNet, StudentConfig, StudentRecord,
};
use crate::polish::compression_report;
use crate::solver::SolverTrace;

pub const WIDTH_RULE: &str =
    "floor(convex_params / (block_inputs + 1 + block_outputs)), at least 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Labelled CSVs; without `test`, `train` is split by the experiment's split spec.
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    pub nonconvex: bool,
    pub prune: bool,
}

impl Default for Baselines {
    fn default() -> Self {
        Self {
            nonconvex: true,
            prune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// `train_fraction` splits a CSV without a test file; `samples_per_class`
    /// limits the rows used for distillation. The seed comes from `seeds`.
    pub split: SplitSpec,
    pub teacher_hidden: Vec<usize>,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    /// Layers replaced by the student; `None` is the penultimate block.
    pub block: Option<Block>,
    pub distill: DistillConfig,
    pub baselines: Baselines,
    pub student_lr: f64,
    /// Non-convex wall-time budget as a multiple of the convex time.
    pub time_budget_factor: f64,
    /// Fixed epoch budget for the non-convex student instead of matched time.
    pub nonconvex_epochs: Option<usize>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            split: SplitSpec::default(),
            teacher_hidden: vec![16, 256, 16],
            teacher_epochs: 20,
            teacher_lr: 1e-3,
            block: None,
            distill: DistillConfig::default(),
            baselines: Baselines::default(),
            student_lr: 1e-3,
            time_budget_factor: 1.1,
            nonconvex_epochs: None,
            seeds: vec![0],
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.time_budget_factor >= 1.0 && self.time_budget_factor.is_finite()) {
            return bad(format!(
                "time_budget_factor must be >= 1, got {}",
                self.time_budget_factor
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.teacher_hidden.is_empty() || self.teacher_hidden.contains(&0) {
            return bad("teacher_hidden needs at least one positive width".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if !(self.student_lr > 0.0 && self.teacher_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.split.samples_per_class == Some(0) {
            return bad("samples_per_class must be at least 1".into());
        }
        self.distill.validate()
    }

    /// Student weight cap: the configured one, else the block's own weight count.
    pub fn param_budget(&self, teacher: &MLPNet<f64>) -> usize {
        self.distill
            .max_params
            .unwrap_or_else(|| self.block().weight_count(teacher))
    }

    /// The configured block, else [`default_block`] of the teacher.
    pub fn block(&self) -> Block {
        self.block
            .unwrap_or_else(|| default_block(self.teacher_hidden.len() + 1))
    }
}

/// The two dense layers feeding the output layer of a `depth`-layer network;
/// just the last hidden layer when `depth < 3`.
pub fn default_block(depth: usize) -> Block {
    if depth >= 3 {
        Block::new(depth - 3, depth - 1)
    } else {
        Block::layer(depth.saturating_sub(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub seed: u64,
    pub params_effective: usize,
    pub block_sparsity: f64,
    pub overall_sparsity: f64,
    pub activation_mse: f64,
    pub end_to_end_accuracy: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub teacher_train_accuracy: f64,
    pub distill_rows: usize,
    pub class_counts: Vec<usize>,
    pub gate_count: usize,
    pub selected_lambda: f64,
    pub polished: bool,
    pub convex_ms: f64,
    pub nonconvex_width: Option<usize>,
    pub nonconvex_budget_ms: Option<f64>,
    pub nonconvex_epochs: Option<usize>,
    pub prune_keep_fraction: Option<f64>,
}

/// Mean and twice the sample standard deviation; the latter needs two seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub two_std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let two_std = (values.len() >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            2.0 * var.sqrt()
        });
        Self { mean, two_std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub seeds: usize,
    pub params_effective: Summary,
    pub block_sparsity: Summary,
    pub overall_sparsity: Summary,
    pub activation_mse: Summary,
    pub end_to_end_accuracy: Summary,
    pub wall_ms: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub block: Block,
    pub block_params: usize,
    pub model_params: usize,
    pub param_budget: usize,
    pub samples_per_class: Option<usize>,
    pub time_budget_factor: f64,
    pub width_rule: String,
    /// Sorted by seed, then method name.
    pub rows: Vec<MethodRow>,
    pub seeds: Vec<SeedInfo>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One line per row with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a MethodRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct SeedTraces {
    pub seed: u64,
    pub convex: SolverTrace,
    pub polish: Option<SolverTrace>,
    pub nonconvex: Vec<StudentRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub traces: Vec<SeedTraces>,
}

/// Data and trained teacher for one seed, shared across sample budgets.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub teacher: MLPNet<f64>,
    pub teacher_train_accuracy: f64,
    pub teacher_ms: f64,
}

pub fn load_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataSource::Synthetic(spec) => gaussian_mixture(spec, seed),
        DataSource::Csv { train, test } => {
            let full = load_csv(train, true)?;
            match test {
                Some(path) => Ok((full, load_csv(path, true)?)),
                None => train_test_split(
                    &full,
                    &SplitSpec {
                        seed,
                        ..config.split
                    },
                ),
            }
        }
    }
}

pub fn prepare_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let (train, test) = load_data(config, seed)?;
    let start = Instant::now();
    let run = train_teacher(
        &train,
        &config.teacher_hidden,
        config.teacher_epochs,
        config.teacher_lr,
        seed,
    )?;
    let teacher_ms = start.elapsed().as_secs_f64() * 1e3;
    config.block().validate(&run.net)?;
    Ok(SeedContext {
        seed,
        train,
        test,
        teacher: run.net,
        teacher_train_accuracy: run.train_accuracy,
        teacher_ms,
    })
}

/// Hidden-unit biases count alongside weights, matching the lifted convex input.
fn relu_student_params(net: &MLPNet<f64>) -> usize {
    let hidden_bias: usize = net.layers[..net.depth() - 1]
        .iter()
        .map(|l| l.bias.iter().filter(|b| **b != 0.0).count())
        .sum();
    net.nonzero_weights() + hidden_bias
}

struct Scorer<'a> {
    ctx: &'a SeedContext,
    block: Block,
    z_test: DenseMatrix<f64>,
    t_test: DenseMatrix<f64>,
    block_params: u64,
    model_params: u64,
}

impl Scorer<'_> {
    fn row(
        &self,
        method: &str,
        student: &dyn BlockMap,
        params: usize,
        wall_ms: f64,
    ) -> Result<MethodRow> {
        let acc = swap_and_evaluate(&self.ctx.teacher, self.block, student, &self.ctx.test)?;
        let mse = student.map(&self.z_test)?.mean_squared_error(&self.t_test);
        let cr = compression_report(self.block_params, params as u64, self.model_params)?;
        Ok(MethodRow {
            method: method.to_string(),
            seed: self.ctx.seed,
            params_effective: params,
            block_sparsity: cr.block_sparsity,
            overall_sparsity: cr.overall_sparsity,
            activation_mse: mse,
            end_to_end_accuracy: acc.accuracy,
            wall_ms,
        })
    }
}

/// Teacher, convex student and enabled baselines for one seed.
pub fn run_seed(
    config: &ExperimentConfig,
    ctx: &SeedContext,
) -> Result<(Vec<MethodRow>, SeedInfo, SeedTraces)> {
    let block = config.block();
    let teacher = &ctx.teacher;
    let distill_ds = match config.split.samples_per_class {
        Some(k) => subsample_per_class(
            &ctx.train,
            &SplitSpec {
                seed: ctx.seed,
                samples_per_class: Some(k),
                ..config.split
            },
        )?,
        None => ctx.train.clone(),
    };
    let test_acts = extract_block_activations(teacher, &ctx.test.without_labels(), block)?;
    let scorer = Scorer {
        ctx,
        block,
        z_test: test_acts.z.cast(),
        t_test: test_acts.t.cast(),
        block_params: block.weight_count(teacher) as u64,
        model_params: teacher.weight_count() as u64,
    };
    let in_place = InPlaceBlock {
        net: teacher,
        block,
    };
    let mut rows = vec![scorer.row(
        "teacher",
        &in_place,
        block.weight_count(teacher),
        ctx.teacher_ms,
    )?];

    let dcfg = DistillConfig {
        seed: ctx.seed,
        max_params: Some(config.param_budget(teacher)),
        ..config.distill.clone()
    };
    let start = Instant::now();
    let dist = distill_block(teacher, block, &distill_ds, &dcfg)?;
    let convex_ms = start.elapsed().as_secs_f64() * 1e3;
    let convex_params = dist.student.effective_params();
    rows.push(scorer.row("convex", &dist.student, convex_params, convex_ms)?);

    let mut info = SeedInfo {
        seed: ctx.seed,
        teacher_train_accuracy: ctx.teacher_train_accuracy,
        distill_rows: distill_ds.len(),
        class_counts: distill_ds.class_counts()?,
        gate_count: dist.gate_count,
        selected_lambda: dist.path[dist.selected].lambda,
        polished: dist.polished,
        convex_ms,
        nonconvex_width: None,
        nonconvex_budget_ms: None,
        nonconvex_epochs: None,
        prune_keep_fraction: None,
    };
    let mut traces = SeedTraces {
        seed: ctx.seed,
        convex: dist.trace.clone(),
        polish: dist.polish_trace.clone(),
        nonconvex: Vec::new(),
    };

    if config.baselines.nonconvex {
        let acts = extract_block_activations(teacher, &distill_ds.without_labels(), block)?;
        let (din, dout) = (block.input_dim(teacher), block.output_dim(teacher));
        let width = width_for_budget(convex_params, din + 1, dout);
        let budget = match config.nonconvex_epochs {
            Some(e) => Budget::Epochs(e),
            None => Budget::Millis(config.time_budget_factor * convex_ms),
        };
        let scfg = StudentConfig {
            lr: config.student_lr,
            ..StudentConfig::new(width, budget, ctx.seed)
        };
        let run = train_relu_student(&acts, &scfg)?;
        rows.push(scorer.row(
            "nonconvex",
            &run.net,
            relu_student_params(&run.net),
            run.elapsed_ms,
        )?);
        info.nonconvex_width = Some(width);
        info.nonconvex_budget_ms = match budget {
            Budget::Millis(ms) => Some(ms),
            Budget::Epochs(_) => None,
        };
        info.nonconvex_epochs = Some(run.epochs);
        traces.nonconvex = run.trace;
    }

    if config.baselines.prune {
        let start = Instant::now();
        let total = block.weight_count(teacher);
        let keep = (convex_params as f64 / total as f64).min(1.0);
        let mut pruned = teacher.clone();
        let block_net = MLPNet::new(teacher.layers[block.start..block.end].to_vec())?;
        let block_net = if keep > 0.0 {
            magnitude_prune(&block_net, keep)
        } else {
            let mut z = block_net;
            z.layers
                .iter_mut()
                .for_each(|l| l.weight.as_mut_slice().fill(0.0));
            z
        };
        pruned.layers[block.start..block.end].clone_from_slice(&block_net.layers);
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let student = InPlaceBlock {
            net: &pruned,
            block,
        };
        rows.push(scorer.row("prune", &student, block_net.nonzero_weights(), wall)?);
        info.prune_keep_fraction = Some(keep);
    }
    Ok((rows, info, traces))
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn assemble(
    config: &ExperimentConfig,
    contexts: &[SeedContext],
    results: Vec<(Vec<MethodRow>, SeedInfo, SeedTraces)>,
) -> ExperimentRun {
    let block = config.block();
    let teacher = &contexts[0].teacher;
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut traces = Vec::new();
    for (r, s, t) in results {
        rows.extend(r);
        seeds.push(s);
        traces.push(t);
    }
    rows.sort_by(|a, b| (a.seed, &a.method).cmp(&(b.seed, &b.method)));
    seeds.sort_by_key(|s| s.seed);
    traces.sort_by_key(|t| t.seed);
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let aggregates = methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&MethodRow> = rows.iter().filter(|r| r.method == m).collect();
            let col = |f: fn(&MethodRow) -> f64| {
                Summary::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                seeds: sel.len(),
                params_effective: col(|r| r.params_effective as f64),
                block_sparsity: col(|r| r.block_sparsity),
                overall_sparsity: col(|r| r.overall_sparsity),
                activation_mse: col(|r| r.activation_mse),
                end_to_end_accuracy: col(|r| r.end_to_end_accuracy),
                wall_ms: col(|r| r.wall_ms),
                method: m,
            }
        })
        .collect();
    ExperimentRun {
        report: ExperimentReport {
            block,
            block_params: block.weight_count(teacher),
            model_params: teacher.weight_count(),
            param_budget: config.param_budget(teacher),
            samples_per_class: config.split.samples_per_class,
            time_budget_factor: config.time_budget_factor,
            width_rule: WIDTH_RULE.to_string(),
            rows,
            seeds,
            aggregates,
        },
        traces,
    }
}

fn prepare_all(config: &ExperimentConfig) -> Result<Vec<SeedContext>> {
    config
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(config, s))
        .collect()
}

fn run_contexts(config: &ExperimentConfig, contexts: &[SeedContext]) -> Result<ExperimentRun> {
    let results = contexts
        .par_iter()
        .map(|ctx| run_seed(config, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(config, contexts, results))
}

/// Full comparison over `config.seeds`, with traces.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    with_pool(config.jobs, || {
        let contexts = prepare_all(config)?;
        run_contexts(config, &contexts)
    })?
}

pub fn compare_methods(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment(config).map(|r| r.report)
}

/// One experiment per samples-per-class budget. Teachers and data are shared
/// across budgets, so every budget sees the same seeds.
pub fn sample_budget_sweep_runs(
    config: &ExperimentConfig,
    budgets: &[usize],
) -> Result<Vec<ExperimentRun>> {
    config.validate()?;
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::InvalidArgument(
            "budgets must be a non-empty list of positive sample counts".into(),
        ));
    }
    with_pool(config.jobs, || {
        let contexts = prepare_all(config)?;
        budgets
            .iter()
            .map(|&b| {
                let mut cfg = config.clone();
                cfg.split.samples_per_class = Some(b);
                run_contexts(&cfg, &contexts)
            })
            .collect()
    })?
}

pub fn sample_budget_sweep(
    config: &ExperimentConfig,
    budgets: &[usize],
) -> Result<Vec<ExperimentReport>> {
    Ok(sample_budget_sweep_runs(config, budgets)?
        .into_iter()
        .map(|r| r.report)
        .collect())
}
