use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::student::{BlockMap, DistilledStudent, InputLift};
use crate::data::{rng, ActivationDataset, Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::gates::{data_derived_gates, default_gate_count, sample_gaussian_gates, GateSet};
use crate::grelu::{recover_weights, ZERO_BLOCK_NORM};
use crate::nonconvex::{extract_block_activations, Block, MLPNet};
use crate::polish::{
    build_polish_problem, polish_lambda_max, prune_units, solve_group_elastic, PolishConfig,
};
use crate::solver::{
    lambda_max, lambda_path, GatedSolver, Method, SolverConfig, SolverTrace, StopReason,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    #[default]
    Gaussian,
    DataDerived,
}

impl std::str::FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(GateKind::Gaussian),
            "data-derived" => Ok(GateKind::DataDerived),
            _ => Err(Error::InvalidArgument(format!(
                "unknown gate kind {s:?} (expected gaussian or data-derived)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Gate count before pattern deduplication; `None` uses the default formula.
    pub gates: Option<usize>,
    pub gate_kind: GateKind,
    pub lambda_points: usize,
    /// Decades spanned below `lambda_max`.
    pub lambda_decades: f64,
    pub holdout_fraction: f64,
    pub solver: SolverConfig,
    pub polish: bool,
    /// Polish strength as a fraction of the smallest all-zero polish penalty.
    pub polish_lambda_ratio: f64,
    pub polish_config: PolishConfig,
    /// Upper bound on the student's nonzero weights; path points above it are never selected.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            gates: None,
            gate_kind: GateKind::Gaussian,
            lambda_points: 10,
            lambda_decades: 3.0,
            holdout_fraction: 0.1,
            solver: SolverConfig {
                max_iters: 500,
                tol_rel_obj: 1e-6,
                tol_grad_map: 1e-6,
                gram: true,
                ..SolverConfig::default()
            },
            polish: true,
            polish_lambda_ratio: 1e-3,
            polish_config: PolishConfig {
                max_iters: 500,
                tol_rel_obj: 1e-6,
                tol_grad_map: 1e-6,
                ..PolishConfig::default()
            },
            max_params: None,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.gates == Some(0) {
            return Err(Error::EmptyGateSet);
        }
        if self.lambda_points == 0 {
            return bad("lambda_points must be at least 1");
        }
        if !(self.lambda_decades >= 0.0 && self.lambda_decades.is_finite()) {
            return bad("lambda_decades must be finite and >= 0");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in (0, 1)");
        }
        if !(self.polish_lambda_ratio >= 0.0 && self.polish_lambda_ratio.is_finite()) {
            return bad("polish_lambda_ratio must be finite and >= 0");
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub hidden: usize,
    pub params: usize,
    pub holdout_mse: f64,
}

#[derive(Debug, Clone)]
pub struct Distillation {
    pub student: DistilledStudent,
    pub path: Vec<PathPoint>,
    /// Index into `path` of the chosen point.
    pub selected: usize,
    pub polished: bool,
    pub holdout_mse: f64,
    /// Path solves back to back.
    pub trace: SolverTrace,
    pub polish_trace: Option<SolverTrace>,
    pub gate_count: usize,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

/// Fits a convex student to `block` of `teacher` from the inputs of `ds`.
/// The labels of `ds` are dropped before anything else happens.
pub fn distill_block(
    teacher: &MLPNet<f64>,
    block: Block,
    ds: &Dataset,
    config: &DistillConfig,
) -> Result<Distillation> {
    let unlabeled = ds.without_labels();
    let acts = extract_block_activations(teacher, &unlabeled, block)?;
    distill_activations(&acts, config)
}

fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(rng::substream(seed, 7)));
    if n < 2 {
        return (order.clone(), order);
    }
    let hold = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (h, t) = order.split_at(hold);
    (t.to_vec(), h.to_vec())
}

/// Row split, fitted lift and gates that [`distill_activations`] uses.
#[derive(Debug, Clone)]
pub struct DistillDesign {
    pub train_idx: Vec<usize>,
    pub hold_idx: Vec<usize>,
    pub lift: InputLift,
    /// Lifted training inputs.
    pub x: DenseMatrix<f64>,
    pub gates: GateSet<f64>,
}

pub fn prepare_design(acts: &ActivationDataset, config: &DistillConfig) -> Result<DistillDesign> {
    config.validate()?;
    if acts.is_empty() {
        return Err(Error::NoRows);
    }
    let (train_idx, hold_idx) = holdout_split(acts.len(), config.holdout_fraction, config.seed);
    let z_train = acts.z.cast::<f64>().select_rows(&train_idx);
    let lift = InputLift::fit(&z_train, true);
    let x = lift.apply(&z_train)?;
    let gate_seed = rng::substream(config.seed, 3);
    let count = config
        .gates
        .unwrap_or_else(|| default_gate_count(x.rows(), x.cols()));
    let gates: GateSet<f64> = match config.gate_kind {
        GateKind::Gaussian => sample_gaussian_gates(&x, Some(count), gate_seed)?,
        GateKind::DataDerived => data_derived_gates(&x, count, gate_seed)?,
    };
    if gates.is_empty() {
        return Err(Error::EmptyGateSet);
    }
    Ok(DistillDesign {
        train_idx,
        hold_idx,
        lift,
        x,
        gates,
    })
}

/// Gates, regularization path, held-out selection, recovery and optional polish.
pub fn distill_activations(
    acts: &ActivationDataset,
    config: &DistillConfig,
) -> Result<Distillation> {
    let DistillDesign {
        train_idx,
        hold_idx,
        lift,
        x,
        gates,
    } = prepare_design(acts, config)?;
    let z: DenseMatrix<f64> = acts.z.cast();
    let t: DenseMatrix<f64> = acts.t.cast();
    let y_train = t.select_rows(&train_idx);
    let (z_hold, y_hold) = (z.select_rows(&hold_idx), t.select_rows(&hold_idx));

    let budget = config.max_params.unwrap_or(usize::MAX);
    let lmax = lambda_max(&x, &y_train, &gates)?;
    let lambdas = lambda_path(lmax, config.lambda_points, config.lambda_decades);
    let solver = GatedSolver::new(&x, &y_train, &gates, &config.solver)?;
    let mut trace = SolverTrace::default();
    let mut path = Vec::with_capacity(lambdas.len());
    let mut best: Option<(usize, DistilledStudent)> = None;
    let mut warm = None;
    for (j, &lam) in lambdas.iter().enumerate() {
        let out = solver.solve(Method::Rfista, lam, warm.as_ref())?;
        trace.extend_shifted(&out.trace);
        let student = DistilledStudent::new(lift.clone(), recover_weights(&out.solution))?;
        let holdout_mse = student.map(&z_hold)?.mean_squared_error(&y_hold);
        let params = student.effective_params();
        path.push(PathPoint {
            lambda: lam,
            objective: out.objective,
            iterations: out.iterations,
            stop: out.stop,
            hidden: student.net.hidden(),
            params,
            holdout_mse,
        });
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| holdout_mse < path[*b].holdout_mse);
        if params <= budget && better {
            best = Some((j, student));
        }
        warm = Some(out.solution);
    }
    let (selected, mut student) = best.ok_or(Error::EmptyStudent)?;
    let mut holdout_mse = path[selected].holdout_mse;

    let mut polished = false;
    let mut polish_trace = None;
    if config.polish && student.net.hidden() > 0 {
        let prob = build_polish_problem(&student.net, &x, &y_train)?;
        let pcfg = PolishConfig {
            lambda: config.polish_lambda_ratio * polish_lambda_max(&prob),
            ..config.polish_config.clone()
        };
        let res = solve_group_elastic(&prob, &pcfg)?;
        let refit = DistilledStudent::new(
            lift.clone(),
            prune_units(&student.net, &res.beta, &res.intercept, ZERO_BLOCK_NORM)?,
        )?;
        let mse = refit.map(&z_hold)?.mean_squared_error(&y_hold);
        polish_trace = Some(res.trace);
        if mse < holdout_mse && refit.effective_params() <= budget {
            student = refit;
            holdout_mse = mse;
            polished = true;
        }
    }
    Ok(Distillation {
        student,
        path,
        selected,
        polished,
        holdout_mse,
        trace,
        polish_trace,
        gate_count: gates.len(),
        train_rows: train_idx.len(),
        holdout_rows: hold_idx.len(),
    })
}
