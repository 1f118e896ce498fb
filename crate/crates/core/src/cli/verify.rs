//! Self-contained oracle checks run by `verify`.

use serde::Serialize;

use crate::data::{rng, DenseMatrix};
use crate::error::Result;
use crate::gates::{enumerate_arrangements, sample_gaussian_gates};
use crate::grelu::ConvexSolution;
use crate::solver::{
    cone_feasibility, global_optimality_probe, lambda_max, objective, smooth_gradient, ConeProgram,
    GatedSolver, Loss, Method, ProbeConfig, SolverConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    pub passed: bool,
    /// Worst observed value of the check's error measure.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub tiny: bool,
    pub seed: u64,
    pub checks: Vec<OracleCheck>,
    pub passed: bool,
}

fn random(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix<f64>> {
    let mut r = rng::seeded(seed);
    DenseMatrix::new(rows, cols, rng::normal_vec(&mut r, rows * cols, 1.0))
}

fn check(name: &str, instances: usize, worst: f64, tolerance: f64) -> OracleCheck {
    OracleCheck {
        name: name.to_string(),
        instances,
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

/// Largest relative error between the analytic gradient and central differences.
fn gradient_check(loss: Loss, instances: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..instances as u64 {
        let base = rng::substream(seed, 100 + s);
        let x = random(8, 3, base)?;
        let mut y = random(8, 2, base + 1)?;
        if loss == Loss::Logistic {
            y = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        }
        let gates = sample_gaussian_gates(&x, Some(4), base + 2)?;
        let blocks = (0..gates.len())
            .map(|i| random(3, 2, base + 10 + i as u64))
            .collect::<Result<Vec<_>>>()?;
        let sol = ConvexSolution::new(blocks, 0.0, gates)?;
        let cfg = SolverConfig {
            loss,
            lambda: 0.0,
            ..SolverConfig::default()
        };
        let grad = smooth_gradient(&sol, &x, &y, &cfg)?;
        let h = 1e-5;
        for (i, gi) in grad.iter().enumerate() {
            for r in 0..3 {
                for k in 0..2 {
                    let mut plus = sol.clone();
                    plus.blocks[i][(r, k)] += h;
                    let mut minus = sol.clone();
                    minus.blocks[i][(r, k)] -= h;
                    let fd = (objective(&plus, &x, &y, &cfg)? - objective(&minus, &x, &y, &cfg)?)
                        / (2.0 * h);
                    let g = gi[(r, k)];
                    worst = worst.max((fd - g).abs() / g.abs().max(fd.abs()).max(1e-6));
                }
            }
        }
    }
    Ok(worst)
}

/// Witness gates lie in their own cones; negated witnesses must be flagged.
/// Returns the number of misclassified blocks.
fn cone_check(instances: usize, seed: u64) -> Result<f64> {
    let mut wrong = 0usize;
    for s in 0..instances as u64 {
        let x = random(6, 2, rng::substream(seed, 200 + s))?;
        let gates = enumerate_arrangements(&x, seed)?;
        let dirs: Vec<Vec<f64>> = gates
            .gates()
            .iter()
            .map(|g| g.direction().to_vec())
            .collect();
        let zeros = vec![vec![0.0; x.cols()]; dirs.len()];
        let own = ConeProgram {
            patterns: gates.patterns().to_vec(),
            v: dirs.clone(),
            u: zeros.clone(),
        };
        wrong += cone_feasibility(&own, &x)?.violating.len();
        let flipped = ConeProgram {
            patterns: gates.patterns().to_vec(),
            v: dirs
                .iter()
                .map(|d| d.iter().map(|v| -v).collect())
                .collect(),
            u: zeros,
        };
        let report = cone_feasibility(&flipped, &x)?;
        for (i, d) in dirs.iter().enumerate() {
            let moves = (0..x.rows()).any(|j| {
                let s: f64 = x.row(j).iter().zip(d).map(|(a, b)| a * b).sum();
                s.abs() > 1e-6
            });
            if moves && report.feasible[i] {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64)
}

/// Largest entry of the solution just above `lambda_max`; infinite when the
/// solution just below it is zero.
fn lambda_max_check(instances: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..instances as u64 {
        let base = rng::substream(seed, 300 + s);
        let x = random(20, 3, base)?;
        let y = random(20, 2, base + 1)?;
        let gates = sample_gaussian_gates(&x, Some(6), base + 2)?;
        let lm = lambda_max(&x, &y, &gates)?;
        let cfg = SolverConfig {
            max_iters: 2000,
            ..SolverConfig::default()
        };
        let solver = GatedSolver::new(&x, &y, &gates, &cfg)?;
        let at = solver.solve(Method::Rfista, 1.01 * lm, None)?;
        let at_max = at
            .solution
            .blocks
            .iter()
            .flat_map(|b| b.as_slice())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(at_max);
        let below = solver.solve(Method::Rfista, 0.99 * lm, None)?;
        if below
            .solution
            .blocks
            .iter()
            .all(|b| b.as_slice().iter().all(|v| *v == 0.0))
        {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Worst amount by which a non-convex restart undercuts the convex optimum.
fn probe_check(instances: usize, restarts: usize, iters: usize, seed: u64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for s in 0..instances as u64 {
        let base = rng::substream(seed, 400 + s);
        let n = 4 + (s as usize % 4);
        let x = random(n, 2, base)?;
        let y = random(n, 1, base + 1)?.into_vec();
        let gates = enumerate_arrangements(&x, base)?;
        let report = global_optimality_probe(
            &x,
            &y,
            &gates,
            &ProbeConfig {
                restarts,
                iters,
                seed: base,
                ..ProbeConfig::default()
            },
        )?;
        worst = worst.max(-report.margin);
    }
    Ok(worst)
}

/// Gradient, cone, zero-solution and global-optimality oracles on seeded
/// random instances. `tiny` trims instance counts and restart budgets.
pub fn run_oracle_suite(tiny: bool, seed: u64) -> Result<VerifyReport> {
    let (k, restarts, iters) = if tiny { (2, 6, 800) } else { (10, 50, 3000) };
    let checks = vec![
        check(
            "gradient-squared",
            k,
            gradient_check(Loss::Squared, k, seed)?,
            1e-4,
        ),
        check(
            "gradient-logistic",
            k,
            gradient_check(Loss::Logistic, k, seed)?,
            1e-4,
        ),
        check("cone-feasibility", k, cone_check(k, seed)?, 0.0),
        check("lambda-max", k, lambda_max_check(k, seed)?, 0.0),
        check(
            "global-optimality-probe",
            k,
            probe_check(k, restarts, iters, seed)?,
            crate::solver::probe::PROBE_MARGIN,
        ),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        tiny,
        seed,
        checks,
        passed,
    })
}
