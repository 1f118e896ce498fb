mod common;

use common::{instance, naive_objective, random_matrix, random_solution};
use cvxdistill::data::DenseMatrix;
use cvxdistill::gates::{enumerate_arrangements, ArrangementPattern, Gate, GateSet, GateSource};
use cvxdistill::grelu::ConvexSolution;
use cvxdistill::solver::*;
use proptest::prelude::*;

fn cfg(lambda: f64) -> SolverConfig {
    SolverConfig {
        lambda,
        max_iters: 20_000,
        tol_grad_map: 1e-9,
        tol_rel_obj: 0.0,
        ..SolverConfig::default()
    }
}

#[test]
fn objective_of_zero_solution() {
    let inst = instance(6, 3, 2, 4, 1);
    let zero = ConvexSolution::zeros(inst.gates.clone(), 2, 0.0);
    let val = objective(&zero, &inst.x, &inst.y, &cfg(0.3)).unwrap();
    let expect = inst.y.as_slice().iter().map(|v| v * v).sum::<f64>() / 12.0;
    assert!((val - expect).abs() < 1e-14);
    let y0 = DenseMatrix::zeros(6, 2);
    assert_eq!(objective(&zero, &inst.x, &y0, &cfg(0.3)).unwrap(), 0.0);
}

#[test]
fn objective_matches_loop_evaluator() {
    for seed in 0..10 {
        let inst = instance(7, 3, 2, 5, seed);
        let sol = random_solution(&inst.gates, 2, seed);
        let a = objective(&sol, &inst.x, &inst.y, &cfg(0.17)).unwrap();
        let b = naive_objective(&inst.x, &inst.y, &sol, 0.17);
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

fn fd_check(loss: Loss) {
    for seed in 0..5 {
        let inst = instance(8, 3, 2, 4, 40 + seed);
        let y = if loss == Loss::Logistic {
            inst.y.map(|v| if v > 0.0 { 1.0 } else { -1.0 })
        } else {
            inst.y.clone()
        };
        let c = SolverConfig { loss, ..cfg(0.0) };
        let sol = random_solution(&inst.gates, 2, seed);
        let grad = smooth_gradient(&sol, &inst.x, &y, &c).unwrap();
        let h = 1e-5;
        for (i, gi) in grad.iter().enumerate() {
            for r in 0..3 {
                for k in 0..2 {
                    let mut plus = sol.clone();
                    plus.blocks[i][(r, k)] += h;
                    let mut minus = sol.clone();
                    minus.blocks[i][(r, k)] -= h;
                    let fd = (objective(&plus, &inst.x, &y, &c).unwrap()
                        - objective(&minus, &inst.x, &y, &c).unwrap())
                        / (2.0 * h);
                    let g = gi[(r, k)];
                    let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "loss {loss:?} block {i} ({r},{k}): {g} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn squared_gradient_matches_finite_differences() {
    fd_check(Loss::Squared);
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    fd_check(Loss::Logistic);
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let inst = instance(6, 3, 1, 4, 3);
    let sol = random_solution(&inst.gates, 1, 3);
    let y = sol.forward(&inst.x).unwrap();
    let grad = smooth_gradient(&sol, &inst.x, &y, &cfg(0.0)).unwrap();
    assert!(grad
        .iter()
        .all(|b| b.as_slice().iter().all(|v| v.abs() < 1e-15)));
}

#[test]
fn all_true_gate_gradient_is_least_squares_gradient() {
    let x = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![2.0, -1.0], vec![0.5, 3.0]]).unwrap();
    let y = DenseMatrix::from_rows(&[vec![1.0], vec![0.0], vec![2.0]]).unwrap();
    let gates = GateSet::from_gates(
        &x,
        vec![Gate::new(vec![1.0, 0.0]).unwrap()],
        GateSource::Gaussian,
    )
    .unwrap();
    let v = DenseMatrix::from_rows(&[vec![0.3], vec![-0.2]]).unwrap();
    let sol = ConvexSolution::new(vec![v.clone()], 0.0, gates).unwrap();
    let grad = smooth_gradient(&sol, &x, &y, &cfg(0.0)).unwrap();
    let mut r = x.matmul(&v).unwrap();
    for (a, b) in r.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *a = (*a - b) / 3.0;
    }
    let expect = x.t_matmul(&r).unwrap();
    assert!(grad[0].max_abs_diff(&expect) < 1e-15);
}

#[test]
fn prox_examples() {
    let mut v = vec![3.0f64, 4.0];
    prox_group_l2(&mut v, 2.5);
    assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
    let mut v = vec![0.3, -0.4];
    prox_group_l2(&mut v, 0.5);
    assert_eq!(v, vec![0.0, 0.0]);
    let mut v = vec![0.3, -0.4];
    prox_group_l2(&mut v, 0.0);
    assert_eq!(v, vec![0.3, -0.4]);
}

#[test]
fn lambda_max_characterizes_zero_solution() {
    for seed in 0..5 {
        let inst = instance(12, 3, 2, 6, 100 + seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        assert!(lm > 0.0);
        let (above, trace) = solve_ista(&inst.x, &inst.y, &inst.gates, &cfg(1.01 * lm)).unwrap();
        assert_eq!(above.nonzero_groups(), 0);
        assert!(above
            .blocks
            .iter()
            .all(|b| b.as_slice().iter().all(|v| *v == 0.0)));
        assert!(trace.records.len() <= 2);
        let (below, _) = solve_rfista(&inst.x, &inst.y, &inst.gates, &cfg(0.99 * lm)).unwrap();
        assert!(below.nonzero_groups() >= 1);
    }
    let inst = instance(5, 2, 1, 3, 9);
    let y0 = DenseMatrix::zeros(5, 1);
    assert_eq!(lambda_max(&inst.x, &y0, &inst.gates).unwrap(), 0.0);
}

fn positive_design() -> (DenseMatrix<f64>, DenseMatrix<f64>, GateSet<f64>) {
    let x = DenseMatrix::from_rows(&[
        vec![2.0, 0.3, -0.4],
        vec![1.5, -1.0, 0.2],
        vec![1.0, 0.5, 1.2],
    ])
    .unwrap();
    let y = DenseMatrix::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]).unwrap();
    let gates = GateSet::from_gates(
        &x,
        vec![Gate::new(vec![1.0, 0.0, 0.0]).unwrap()],
        GateSource::Gaussian,
    )
    .unwrap();
    (x, y, gates)
}

/// Solves `X v = y` by Gaussian elimination with partial pivoting.
fn solve_linear(x: &DenseMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = x.row(i).to_vec();
            r.push(y[i]);
            r
        })
        .collect();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        let pivot = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
        }
    }
    let mut v = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * v[c]).sum();
        v[r] = (a[r][n] - s) / a[r][r];
    }
    v
}

#[test]
fn unregularized_single_gate_recovers_inverse() {
    let (x, y, gates) = positive_design();
    let expect = solve_linear(&x, y.as_slice());
    let c = SolverConfig {
        max_iters: 200_000,
        tol_grad_map: 1e-12,
        ..cfg(0.0)
    };
    let solver = GatedSolver::new(&x, &y, &gates, &c).unwrap();
    let ista = solver.solve(Method::Ista, 0.0, None).unwrap();
    let fista = solver.solve(Method::Rfista, 0.0, None).unwrap();
    for (a, b) in ista.solution.blocks[0].as_slice().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-6, "ista {a} vs {b}");
    }
    for (a, b) in fista.solution.blocks[0].as_slice().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-6, "fista {a} vs {b}");
    }
    assert!(fista.iterations <= ista.iterations);
}

#[test]
fn objective_is_convex_along_segments() {
    for seed in 0..5 {
        let inst = instance(9, 3, 2, 5, 200 + seed);
        let a = random_solution(&inst.gates, 2, seed);
        let b = random_solution(&inst.gates, 2, seed + 50);
        let c = cfg(0.2);
        let fa = objective(&a, &inst.x, &inst.y, &c).unwrap();
        let fb = objective(&b, &inst.x, &inst.y, &c).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let mut m = a.clone();
            for (mb, bb) in m.blocks.iter_mut().zip(&b.blocks) {
                for (u, w) in mb.as_mut_slice().iter_mut().zip(bb.as_slice()) {
                    *u = t * *u + (1.0 - t) * w;
                }
            }
            let fm = objective(&m, &inst.x, &inst.y, &c).unwrap();
            assert!(fm <= t * fa + (1.0 - t) * fb + 1e-9);
        }
    }
}

#[test]
fn restarted_fista_not_worse_than_ista_at_equal_budget() {
    for seed in 0..10 {
        let inst = instance(40, 4, 1, 10, 300 + seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let c = SolverConfig {
            max_iters: 60,
            tol_grad_map: 0.0,
            ..cfg(0.05 * lm)
        };
        let s = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &c).unwrap();
        let ista = s.solve(Method::Ista, c.lambda, None).unwrap();
        let fista = s.solve(Method::Rfista, c.lambda, None).unwrap();
        assert!(
            fista.objective <= ista.objective + 1e-12,
            "seed {seed}: {} > {}",
            fista.objective,
            ista.objective
        );
    }
}

#[test]
fn fista_stationarity_on_convergence() {
    for seed in 0..10 {
        let inst = instance(30, 3, 2, 8, 400 + seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let c = SolverConfig {
            tol_grad_map: 1e-7,
            ..cfg(0.1 * lm)
        };
        let out = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &c)
            .unwrap()
            .solve(Method::Rfista, c.lambda, None)
            .unwrap();
        assert_eq!(out.stop, StopReason::Converged);
        assert!(out.grad_map_norm <= 1e-7);
    }
}

#[test]
fn gram_iteration_matches_direct_iteration() {
    for seed in 0..5 {
        let inst = instance(50, 4, 3, 9, 700 + seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let direct = cfg(0.05 * lm);
        let gram = SolverConfig {
            gram: true,
            ..direct.clone()
        };
        let a = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &direct)
            .unwrap()
            .solve(Method::Rfista, direct.lambda, None)
            .unwrap();
        let b = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &gram)
            .unwrap()
            .solve(Method::Rfista, gram.lambda, None)
            .unwrap();
        let exact = naive_objective(&inst.x, &inst.y, &b.solution, direct.lambda);
        assert!((b.objective - exact).abs() <= 1e-9 * exact.max(1.0));
        assert!((a.objective - b.objective).abs() <= 1e-8 * a.objective.max(1.0));
        for (pa, pb) in a.solution.blocks.iter().zip(&b.solution.blocks) {
            for (u, v) in pa.as_slice().iter().zip(pb.as_slice()) {
                assert!((u - v).abs() <= 1e-5, "seed {seed}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn trace_records_and_jsonl_schema() {
    let inst = instance(25, 3, 1, 6, 5);
    let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
    let (sol, trace) = solve_rfista(&inst.x, &inst.y, &inst.gates, &cfg(0.1 * lm)).unwrap();
    assert!(!trace.records.is_empty());
    let best = trace
        .records
        .iter()
        .map(|r| r.objective)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(trace.last_objective().unwrap(), best);
    let obj = objective(&sol, &inst.x, &inst.y, &cfg(0.1 * lm)).unwrap();
    assert!((obj - best).abs() <= 1e-12 * best.abs().max(1.0));
    assert!(trace
        .records
        .windows(2)
        .all(|w| w[0].elapsed_ms <= w[1].elapsed_ms));
    let text = trace.to_jsonl();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "elapsed_ms",
                "grad_map_norm",
                "iter",
                "nnz_groups",
                "objective",
                "step_size"
            ]
        );
    }
    assert_eq!(SolverTrace::from_jsonl(&text).unwrap(), trace);
}

#[test]
fn lambda_path_grid() {
    let p = lambda_path(2.0, 4, 3.0);
    let expect = [2.0, 0.2, 0.02, 0.002];
    for (a, b) in p.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15 * b.max(1.0) + 1e-18);
    }
    assert_eq!(lambda_path(2.0, 1, 3.0), vec![2.0]);
    assert_eq!(lambda_path(1.0, 20, 3.0).len(), 20);
}

#[test]
fn warm_started_path_not_worse_than_cold() {
    let inst = instance(40, 3, 2, 8, 77);
    let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
    let lambdas = lambda_path(lm, 6, 2.0);
    let c = SolverConfig {
        max_iters: 5000,
        tol_grad_map: 1e-10,
        ..cfg(0.0)
    };
    let warm = solve_path(&inst.x, &inst.y, &inst.gates, &c, &lambdas).unwrap();
    let s = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &c).unwrap();
    for (lam, w) in lambdas.iter().zip(&warm) {
        let cold = s.solve(Method::Rfista, *lam, None).unwrap();
        assert!(
            w.objective <= cold.objective + 1e-9,
            "lambda {lam}: {} vs {}",
            w.objective,
            cold.objective
        );
    }
}

#[test]
fn one_vs_all_equals_joint_solve() {
    for seed in 0..3 {
        let inst = instance(30, 3, 4, 6, 500 + seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let c = SolverConfig {
            tol_grad_map: 1e-11,
            max_iters: 100_000,
            ..cfg(0.1 * lm)
        };
        let (joint, _) = solve_rfista(&inst.x, &inst.y, &inst.gates, &c).unwrap();
        let ova = solve_one_vs_all(&inst.x, &inst.y, &inst.gates, &c, Method::Rfista).unwrap();
        for (a, b) in joint.blocks.iter().zip(&ova.blocks) {
            assert!(a.max_abs_diff(b) <= 1e-8);
        }
    }
}

#[test]
fn cone_feasibility_examples() {
    let x = DenseMatrix::<f64>::identity(2);
    let both = ArrangementPattern::from_mask(vec![true, true]);
    let first = ArrangementPattern::from_mask(vec![true, false]);
    let zero = ConeProgram {
        patterns: vec![first.clone()],
        v: vec![vec![0.0, 0.0]],
        u: vec![vec![0.0, 0.0]],
    };
    assert!(cone_feasibility(&zero, &x).unwrap().all_feasible());
    let ok = ConeProgram {
        patterns: vec![both],
        v: vec![vec![1.0, 1.0]],
        u: vec![vec![0.0, 0.0]],
    };
    assert!(cone_feasibility(&ok, &x).unwrap().all_feasible());
    let bad = ConeProgram {
        patterns: vec![first],
        v: vec![vec![1.0, 1.0]],
        u: vec![vec![0.0, 0.0]],
    };
    let rep = cone_feasibility(&bad, &x).unwrap();
    assert_eq!(rep.violating, vec![(0, BlockKind::V)]);
    assert!((rep.max_violation - 1.0).abs() < 1e-15);
}

#[test]
fn probe_single_sample_matches_closed_form() {
    let x = DenseMatrix::from_rows(&[vec![0.6, -0.8]]).unwrap();
    let scale = 2.0;
    let x = x.map(|v| v * scale);
    let yv = 1.5f64;
    let lambda = 0.4;
    let gates = enumerate_arrangements(&x, 0).unwrap();
    let report = global_optimality_probe(
        &x,
        &[yv],
        &gates,
        &ProbeConfig {
            lambda,
            restarts: 4,
            iters: 500,
            ..ProbeConfig::default()
        },
    )
    .unwrap();
    // One sample: prediction p = soft(y, lambda / ||x||), objective (p - y)^2 / 2 + lambda |p| / ||x||.
    let a = scale;
    let p = (yv.abs() - lambda / a).max(0.0) * yv.signum();
    let expect = 0.5 * (p - yv).powi(2) + lambda * p.abs() / a;
    assert!(
        (report.convex_objective - expect).abs() < 1e-9,
        "{} vs {expect}",
        report.convex_objective
    );
    assert!(report.passed);
}

#[test]
fn probe_guards_instance_size() {
    let x = random_matrix(11, 2, 1);
    let gates = cvxdistill::gates::sample_gaussian_gates(&x, Some(4), 1).unwrap();
    let err = global_optimality_probe(&x, &[0.0; 11], &gates, &ProbeConfig::default()).unwrap_err();
    assert!(matches!(err, cvxdistill::Error::GuardViolation { .. }));
}

#[test]
fn probe_realizable_without_regularization() {
    let x = random_matrix(6, 2, 21);
    let gates = enumerate_arrangements(&x, 0).unwrap();
    let planted = random_solution(&gates, 1, 4);
    let y = planted.forward(&x).unwrap();
    let report = global_optimality_probe(
        &x,
        y.as_slice(),
        &gates,
        &ProbeConfig {
            lambda: 0.0,
            restarts: 10,
            iters: 4000,
            ..ProbeConfig::default()
        },
    )
    .unwrap();
    assert!(report.convex_objective < 1e-10);
    assert!(report.min_nonconvex < 1e-3, "{}", report.min_nonconvex);
    assert!(report.passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_is_nonexpansive(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        thr in 0.0f64..4.0,
    ) {
        let (mut pa, mut pb) = (a.clone(), b.clone());
        prox_group_l2(&mut pa, thr);
        prox_group_l2(&mut pb, thr);
        let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d_out <= d_in + 1e-12);
    }

    #[test]
    fn ista_is_monotone(seed in 0u64..10_000, frac in 0.0f64..1.0) {
        let inst = instance(15, 3, 2, 5, seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let c = SolverConfig { max_iters: 200, ..cfg(frac * lm) };
        let s = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &c).unwrap();
        let out = s.solve(Method::Ista, c.lambda, None).unwrap();
        let init = objective(&ConvexSolution::zeros(inst.gates.clone(), 2, 0.0), &inst.x, &inst.y, &c).unwrap();
        let mut prev = init;
        for r in &out.trace.records {
            prop_assert!(r.objective <= prev + 1e-12);
            prev = r.objective;
        }
    }

    #[test]
    fn rfista_reports_best_iterate(seed in 0u64..10_000) {
        let inst = instance(15, 3, 1, 5, seed);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).unwrap();
        let (_, trace) = solve_rfista(&inst.x, &inst.y, &inst.gates, &cfg(0.2 * lm)).unwrap();
        let best = trace.records.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(trace.last_objective().unwrap(), best);
    }
}
