//! Small-instance check that the convex optimum lower-bounds non-convex training.

use serde::Serialize;

use super::engine::StopReason;
use super::problem::{GatedSolver, Method, SolverConfig};
use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::gates::GateSet;
use crate::nonconvex::{train_two_layer, HiddenActivation, TwoLayerConfig};

pub const PROBE_MAX_N: usize = 10;
pub const PROBE_MAX_D: usize = 3;
/// Allowed amount by which a non-convex run may undercut the convex optimum.
pub const PROBE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub restarts: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            restarts: 50,
            iters: 3000,
            lr: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub convex_objective: f64,
    pub convex_grad_map_norm: f64,
    pub convex_converged: bool,
    /// Final regularized objective of every non-convex restart.
    pub nonconvex_objectives: Vec<f64>,
    pub min_nonconvex: f64,
    /// `min_nonconvex - convex_objective`.
    pub margin: f64,
    pub passed: bool,
}

/// Solves the gated program over `gates` to high accuracy, then trains bias-free
/// two-layer networks of width `|gates|` (half ReLU, half gated by random
/// members of `gates`) and compares objectives under the same loss scaling.
pub fn global_optimality_probe(
    x: &DenseMatrix<f64>,
    y: &[f64],
    gates: &GateSet<f64>,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let (n, d) = x.shape();
    if n > PROBE_MAX_N || d > PROBE_MAX_D {
        return Err(Error::GuardViolation {
            n,
            d,
            max_n: PROBE_MAX_N,
            max_d: PROBE_MAX_D,
        });
    }
    let ymat = DenseMatrix::new(n, 1, y.to_vec())?;
    let solver_cfg = SolverConfig {
        lambda: cfg.lambda,
        max_iters: 200_000,
        tol_grad_map: 1e-11,
        tol_rel_obj: 0.0,
        seed: cfg.seed,
        ..SolverConfig::default()
    };
    let out =
        GatedSolver::new(x, &ymat, gates, &solver_cfg)?.solve(Method::Rfista, cfg.lambda, None)?;

    let width = gates.len();
    let directions = gates.direction_matrix();
    let mut pick = crate::data::rng::seeded(crate::data::rng::substream(cfg.seed, 7));
    let mut objectives = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let activation = if r % 2 == 0 {
            HiddenActivation::Relu
        } else {
            use rand::Rng;
            let cols: Vec<usize> = (0..width)
                .map(|_| pick.random_range(0..gates.len()))
                .collect();
            HiddenActivation::Gated(directions.select_rows(&cols).transpose())
        };
        let run = train_two_layer(
            x,
            y,
            &TwoLayerConfig {
                width,
                lambda: cfg.lambda,
                iters: cfg.iters,
                lr: cfg.lr,
                init_scale: 0.5,
                seed: crate::data::rng::substream(cfg.seed, 100 + r as u64),
                activation,
            },
        )?;
        objectives.push(run.objective);
    }
    let min_nonconvex = objectives.iter().copied().fold(f64::INFINITY, f64::min);
    let margin = min_nonconvex - out.objective;
    Ok(ProbeReport {
        convex_objective: out.objective,
        convex_grad_map_norm: out.grad_map_norm,
        convex_converged: out.stop == StopReason::Converged,
        nonconvex_objectives: objectives,
        min_nonconvex,
        margin,
        passed: margin >= -PROBE_MARGIN,
    })
}
