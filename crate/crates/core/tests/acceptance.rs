//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers after
//! `--` to run a subset. Everything runs on one thread so wall-time budgets
//! compare like with like.

mod common;

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{instance, random_matrix, random_solution};
use cvxdistill::data::cvxa::{decode, encode};
use cvxdistill::data::{rng, ActivationDataset, Dataset, DenseMatrix, ModelSpec};
use cvxdistill::gates::{enumerate_arrangements, pattern_count_bound, GateSet};
use cvxdistill::grelu::{recover_weights, rescale_balanced, ConvexSolution, GReLUStudent};
use cvxdistill::nonconvex::MLPNet;
use cvxdistill::pipeline::{
    compare_methods, distill_block, prepare_seed, sample_budget_sweep, DataSource,
    DistilledStudent, ExperimentConfig, ExperimentReport, InputLift, SyntheticSpec,
};
use cvxdistill::polish::{
    build_polish_problem, compression_report, polish_lambda_max, prune_units, solve_group_elastic,
    PolishConfig, PolishProblem,
};
use cvxdistill::solver::{
    global_optimality_probe, lambda_max, objective, smooth_gradient, solve_one_vs_all, GatedSolver,
    Loss, Method, ProbeConfig, SolverConfig, StopReason,
};

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_abs(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
    a.max_abs_diff(b)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn uniform(r: &mut rng::Rng, lo: usize, hi: usize) -> usize {
    use rand::Rng;
    r.random_range(lo..=hi)
}

// 1 ------------------------------------------------------------------------

/// Block parameter counts before and after distillation, with the printed sparsity.
const TABLE1: [(u64, u64, f64); 4] = [
    (147_968, 73_328, 0.495),
    (525_568, 164_608, 0.313),
    (2_099_712, 656_896, 0.313),
    (8_393_728, 1_312_768, 0.156),
];

fn table_arithmetic() -> Check {
    let total = TABLE1.iter().map(|r| r.0).sum::<u64>() * 2;
    let mut worst = 0.0f64;
    let mut got = Vec::new();
    for (old, new, printed) in TABLE1 {
        let r = compression_report(old, new, total).map_err(err)?;
        // The printed column mixes truncation and rounding, so no single
        // rounding rule reproduces it; agreement is within one unit in the third place.
        worst = worst.max((r.block_sparsity - printed).abs());
        got.push(format!("{:.4}", r.block_sparsity));
    }
    Ok((
        worst < 1e-3,
        format!(
            "block sparsities {}; max deviation {worst:.1e}",
            got.join(", ")
        ),
    ))
}

// 2 ------------------------------------------------------------------------

fn recovery() -> Check {
    let mut r = rng::seeded(2);
    let mut worst = 0.0f64;
    for s in 0..100u64 {
        let n = uniform(&mut r, 2, 20);
        let d = uniform(&mut r, 1, 8);
        let c = uniform(&mut r, 1, 4);
        let g = uniform(&mut r, 1, 10);
        let inst = instance(n, d, c, g, 10_000 + s);
        let mut sol = random_solution(&inst.gates, c, s + 1);
        // Some exact-zero groups exercise the dropped-unit path.
        for (i, b) in sol.blocks.iter_mut().enumerate() {
            if (i + s as usize).is_multiple_of(3) {
                for v in b.as_mut_slice().iter_mut().take(d) {
                    *v = 0.0;
                }
            }
        }
        let a = sol.forward(&inst.x).map_err(err)?;
        let b = recover_weights(&sol).forward(&inst.x).map_err(err)?;
        worst = worst.max(max_abs(&a, &b));
    }
    Ok((
        worst <= 1e-9,
        format!("max |diff| {worst:.2e} over 100 solutions"),
    ))
}

// 3 ------------------------------------------------------------------------

fn rescaling() -> Check {
    let mut r = rng::seeded(3);
    let mut out_diff = 0.0f64;
    let mut balance = 0.0f64;
    for s in 0..100u64 {
        let n = uniform(&mut r, 5, 30);
        let d = uniform(&mut r, 1, 6);
        let m = uniform(&mut r, 1, 12);
        let c = uniform(&mut r, 1, 4);
        let x = random_matrix(n, d, 20_000 + s);
        if s % 2 == 0 {
            // Gated network with vector outputs.
            let gates = cvxdistill::gates::sample_gaussian_gates(&x, Some(m), s).map_err(err)?;
            let unit_gate: Vec<usize> = (0..m).map(|j| j % gates.len()).collect();
            let w1 = random_matrix(d, m, 30_000 + s).map(|v| v * 3.0);
            let w2 = random_matrix(m, c, 40_000 + s).map(|v| v * 0.2);
            let bias = random_matrix(1, c, 50_000 + s).into_vec();
            let net = GReLUStudent::new(gates, unit_gate, w1, w2, bias).map_err(err)?;
            let bal = net.rescale_balanced();
            out_diff = out_diff.max(max_abs(
                &net.forward(&x).map_err(err)?,
                &bal.forward(&x).map_err(err)?,
            ));
            for j in 0..m {
                balance = balance.max((norm(&bal.w1.column(j)) - norm(bal.w2.row(j))).abs());
            }
        } else {
            // ReLU network with a scalar output; the hidden bias rides with its column.
            let mut net = MLPNet::<f64>::init(&[d, m, 1], 60_000 + s).map_err(err)?;
            let before = net.forward(&x).map_err(err)?;
            for j in 0..m {
                let mut col: Vec<f64> = (0..d).map(|i| net.layers[0].weight[(i, j)]).collect();
                col.push(net.layers[0].bias[j]);
                let w2 = net.layers[1].weight[(j, 0)];
                let (new_col, new_w2) = rescale_balanced(&col, w2).map_err(err)?;
                for (i, v) in new_col.iter().take(d).enumerate() {
                    net.layers[0].weight[(i, j)] = *v;
                }
                net.layers[0].bias[j] = new_col[d];
                net.layers[1].weight[(j, 0)] = new_w2;
                balance = balance.max((norm(&new_col) - new_w2.abs()).abs());
            }
            out_diff = out_diff.max(max_abs(&before, &net.forward(&x).map_err(err)?));
        }
    }
    Ok((
        out_diff <= 1e-9 && balance <= 1e-9,
        format!("max output diff {out_diff:.2e}, max norm imbalance {balance:.2e}"),
    ))
}

// 4 ------------------------------------------------------------------------

fn optimality_probe() -> Check {
    let mut r = rng::seeded(4);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for s in 0..20u64 {
        let n = uniform(&mut r, 2, 8);
        let d = uniform(&mut r, 1, 3);
        let x = random_matrix(n, d, 70_000 + s);
        let y = random_matrix(n, 1, 80_000 + s).into_vec();
        let gates = enumerate_arrangements(&x, s).map_err(err)?;
        let report = global_optimality_probe(
            &x,
            &y,
            &gates,
            &ProbeConfig {
                restarts: 50,
                seed: s,
                ..ProbeConfig::default()
            },
        )
        .map_err(err)?;
        worst = worst.min(report.margin);
        if report.margin < -1e-6 {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("smallest margin {worst:.3e} over 20 instances x 50 restarts"),
    ))
}

// 5 ------------------------------------------------------------------------

fn tight(lambda: f64) -> SolverConfig {
    SolverConfig {
        lambda,
        max_iters: 20_000,
        tol_grad_map: 1e-9,
        tol_rel_obj: 0.0,
        ..SolverConfig::default()
    }
}

fn solver_correctness() -> Check {
    let mut grad_err = 0.0f64;
    for (li, loss) in [Loss::Squared, Loss::Logistic].into_iter().enumerate() {
        for s in 0..5u64 {
            let inst = instance(10, 3, 2, 4, 90_000 + 10 * li as u64 + s);
            let y = if loss == Loss::Logistic {
                inst.y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
            } else {
                inst.y.clone()
            };
            let cfg = SolverConfig {
                loss,
                lambda: 0.0,
                ..SolverConfig::default()
            };
            let sol = random_solution(&inst.gates, 2, s);
            let grad = smooth_gradient(&sol, &inst.x, &y, &cfg).map_err(err)?;
            let h = 1e-5;
            for (i, gi) in grad.iter().enumerate() {
                for rr in 0..3 {
                    for k in 0..2 {
                        let mut p = sol.clone();
                        p.blocks[i][(rr, k)] += h;
                        let mut m = sol.clone();
                        m.blocks[i][(rr, k)] -= h;
                        let fd = (objective(&p, &inst.x, &y, &cfg).map_err(err)?
                            - objective(&m, &inst.x, &y, &cfg).map_err(err)?)
                            / (2.0 * h);
                        let g = gi[(rr, k)];
                        grad_err = grad_err.max((fd - g).abs() / g.abs().max(fd.abs()).max(1e-6));
                    }
                }
            }
        }
    }

    let mut ista_monotone = true;
    let mut zero_above = true;
    let mut nonzero_below = true;
    let mut stationarity = 0.0f64;
    let mut converged = true;
    for s in 0..10u64 {
        let inst = instance(30, 3, 2, 8, 95_000 + s);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).map_err(err)?;
        let cfg = SolverConfig {
            tol_grad_map: 1e-7,
            ..tight(0.1 * lm)
        };
        let solver = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &cfg).map_err(err)?;
        let ista = solver.solve(Method::Ista, 0.1 * lm, None).map_err(err)?;
        let mut prev = f64::INFINITY;
        for rec in &ista.trace.records {
            ista_monotone &= rec.objective <= prev + 1e-12;
            prev = rec.objective;
        }
        let at = solver.solve(Method::Rfista, lm, None).map_err(err)?;
        zero_above &= at
            .solution
            .blocks
            .iter()
            .all(|b| b.as_slice().iter().all(|v| v.abs() <= 1e-12));
        let above = solver.solve(Method::Rfista, 1.5 * lm, None).map_err(err)?;
        zero_above &= above.solution.nonzero_groups() == 0;
        let below = solver.solve(Method::Rfista, 0.99 * lm, None).map_err(err)?;
        nonzero_below &= below.solution.nonzero_groups() > 0;
        let fista = solver.solve(Method::Rfista, 0.1 * lm, None).map_err(err)?;
        converged &= fista.stop == StopReason::Converged;
        stationarity = stationarity.max(fista.grad_map_norm);
    }
    let ok = grad_err < 1e-4
        && ista_monotone
        && zero_above
        && nonzero_below
        && converged
        && stationarity <= 1e-7;
    Ok((
        ok,
        format!(
            "grad rel err {grad_err:.1e}; ista monotone {ista_monotone}; zero at/above lambda_max {zero_above}; \
             nonzero at 0.99 {nonzero_below}; stationarity {stationarity:.1e} (converged {converged})"
        ),
    ))
}

// 6 ------------------------------------------------------------------------

fn one_vs_all() -> Check {
    let mut worst = 0.0f64;
    for s in 0..5u64 {
        let inst = instance(30, 3, 4, 6, 110_000 + s);
        let lm = lambda_max(&inst.x, &inst.y, &inst.gates).map_err(err)?;
        let cfg = SolverConfig {
            tol_grad_map: 1e-11,
            max_iters: 100_000,
            ..tight(0.1 * lm)
        };
        let joint = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &cfg)
            .map_err(err)?
            .solve(Method::Rfista, cfg.lambda, None)
            .map_err(err)?
            .solution;
        let ova =
            solve_one_vs_all(&inst.x, &inst.y, &inst.gates, &cfg, Method::Rfista).map_err(err)?;
        // Independent per-column solves, stitched by hand.
        for k in 0..4 {
            let yk = inst.y.select_columns(&[k]);
            let col = GatedSolver::new(&inst.x, &yk, &inst.gates, &cfg)
                .map_err(err)?
                .solve(Method::Rfista, cfg.lambda, None)
                .map_err(err)?
                .solution;
            for (jb, cb) in joint.blocks.iter().zip(&col.blocks) {
                for r in 0..3 {
                    worst = worst.max((jb[(r, k)] - cb[(r, 0)]).abs());
                }
            }
        }
        for (a, b) in joint.blocks.iter().zip(&ova.blocks) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    Ok((
        worst <= 1e-8,
        format!("max |joint - per-class| {worst:.2e} on 5 instances"),
    ))
}

// 7 ------------------------------------------------------------------------

fn desk_config(seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seeds,
        jobs: 1,
        ..ExperimentConfig::default()
    };
    cfg.distill.gates = Some(25);
    cfg
}

fn label_free() -> Check {
    let mut cfg = desk_config(vec![0, 1, 2]);
    cfg.data = DataSource::Synthetic(SyntheticSpec {
        train_per_class: 200,
        ..SyntheticSpec::default()
    });
    let mut identical = 0;
    for &seed in &cfg.seeds {
        let ctx = prepare_seed(&cfg, seed).map_err(err)?;
        let dc = cvxdistill::pipeline::DistillConfig {
            seed,
            ..cfg.distill.clone()
        };
        let labels = ctx.train.labels().ok_or("no labels")?;
        let mut shuffled = labels.to_vec();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng::seeded(seed + 99));
        let poisoned =
            Dataset::with_classes(ctx.train.x.clone(), shuffled, ctx.train.num_classes())
                .map_err(err)?;
        let a = distill_block(&ctx.teacher, cfg.block(), &ctx.train, &dc).map_err(err)?;
        let b = distill_block(&ctx.teacher, cfg.block(), &poisoned, &dc).map_err(err)?;
        let ja = a.student.to_model_spec().map_err(err)?.to_json();
        let jb = b.student.to_model_spec().map_err(err)?.to_json();
        if a.student == b.student && ja == jb {
            identical += 1;
        }
    }
    Ok((identical == 3, format!("{identical}/3 seeds bit-identical")))
}

// 8 ------------------------------------------------------------------------

fn paired(report: &ExperimentReport, a: &str, b: &str) -> Vec<(u64, f64, f64, f64, f64)> {
    report
        .rows_for(a)
        .map(|ra| {
            let rb = report
                .rows_for(b)
                .find(|r| r.seed == ra.seed)
                .expect("every seed has every method");
            (
                ra.seed,
                ra.activation_mse,
                rb.activation_mse,
                ra.end_to_end_accuracy,
                rb.end_to_end_accuracy,
            )
        })
        .collect()
}

fn matched_time() -> Check {
    let mut cfg = desk_config((0..10).collect());
    cfg.baselines.prune = false;
    let report = compare_methods(&cfg).map_err(err)?;
    let pairs = paired(&report, "convex", "nonconvex");
    let wins = pairs.iter().filter(|p| p.1 <= p.2).count();
    let cvx: Vec<String> = pairs.iter().map(|p| format!("{:.3}", p.1)).collect();
    let ncv: Vec<String> = pairs.iter().map(|p| format!("{:.3}", p.2)).collect();
    let t: Vec<String> = report
        .seeds
        .iter()
        .map(|s| format!("{:.1}", s.convex_ms / 1e3))
        .collect();
    Ok((
        wins >= 8,
        format!(
            "convex mse <= nonconvex mse in {wins}/10 seeds; convex [{}] vs nonconvex [{}]; T(s) [{}]",
            cvx.join(" "),
            ncv.join(" "),
            t.join(" ")
        ),
    ))
}

// 9 ------------------------------------------------------------------------

fn sample_budgets() -> Check {
    let cfg = desk_config((0..10).collect());
    let mut cfg_small = cfg.clone();
    cfg_small.baselines.prune = false;
    let reports = sample_budget_sweep(&cfg_small, &[10, 50]).map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (spc, report) in [10, 50].iter().zip(&reports) {
        let pairs = paired(report, "convex", "nonconvex");
        let good = pairs.iter().filter(|p| p.3 >= p.4 - 0.01).count();
        ok &= good >= 8;
        parts.push(format!(
            "spc {spc}: convex >= nonconvex - 0.01 in {good}/10"
        ));
    }
    let mut generous = cfg;
    generous.baselines.prune = false;
    generous.nonconvex_epochs = Some(GENEROUS_EPOCHS);
    let report = compare_methods(&generous).map_err(err)?;
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    for method in ["convex", "nonconvex"] {
        for row in report.rows_for(method) {
            let teacher = report
                .rows_for("teacher")
                .find(|r| r.seed == row.seed)
                .ok_or("missing teacher row")?;
            worst_gap = worst_gap.max(teacher.end_to_end_accuracy - row.end_to_end_accuracy);
        }
    }
    ok &= worst_gap <= 0.02;
    parts.push(format!(
        "full data, {GENEROUS_EPOCHS} non-convex epochs: largest teacher gap {worst_gap:.4}"
    ));
    Ok((ok, parts.join("; ")))
}

const GENEROUS_EPOCHS: usize = 100;

// 10 -----------------------------------------------------------------------

fn polishing() -> Check {
    let mut monotone = true;
    let mut prune_diff = 0.0f64;
    for s in 0..10u64 {
        let c = 1 + (s as usize % 3);
        let inst = instance(30, 3, c, 6, 120_000 + s);
        let sol = random_solution(&inst.gates, c, s + 5);
        let student = recover_weights(&sol);
        let y = random_matrix(30, c, 130_000 + s);
        let prob = build_polish_problem(&student, &inst.x, &y).map_err(err)?;
        let lmax = polish_lambda_max(&prob);
        for frac in [0.05, 0.3, 0.8] {
            let res = solve_group_elastic(
                &prob,
                &PolishConfig {
                    lambda: frac * lmax,
                    ..PolishConfig::default()
                },
            )
            .map_err(err)?;
            monotone &= res.objective <= res.initial_objective;
            let mut full = student.clone();
            full.w2 = res.beta.clone();
            full.output_bias = res.intercept.clone();
            let pruned = prune_units(&student, &res.beta, &res.intercept, 1e-10).map_err(err)?;
            prune_diff = prune_diff.max(max_abs(
                &full.forward(&inst.x).map_err(err)?,
                &pruned.forward(&inst.x).map_err(err)?,
            ));
        }
    }

    // alpha = 1 on the expanded gated design is the convex program itself.
    // Polish groups span every output column, so the programs coincide for one output.
    let mut path_diff = 0.0f64;
    for s in 0..3u64 {
        let inst = instance(25, 3, 1, 5, 140_000 + s);
        let (n, d) = inst.x.shape();
        let g = inst.gates.len();
        let masks = inst.gates.masks_for(&inst.x).map_err(err)?;
        let features = DenseMatrix::from_fn(n, d * g, |r, col| {
            if masks[col / d][r] {
                inst.x[(r, col % d)]
            } else {
                0.0
            }
        });
        let groups: Vec<Vec<usize>> = (0..g).map(|i| (i * d..(i + 1) * d).collect()).collect();
        let mut prob = PolishProblem::new(features, inst.y.clone())
            .map_err(err)?
            .with_groups(groups)
            .map_err(err)?;
        prob.fit_intercept = false;
        let lmax = polish_lambda_max(&prob);
        for frac in [0.8, 0.4, 0.2, 0.1] {
            let lam = frac * lmax;
            let pol = solve_group_elastic(
                &prob,
                &PolishConfig {
                    alpha: 1.0,
                    lambda: lam,
                    max_iters: 100_000,
                    tol_grad_map: 1e-12,
                    tol_rel_obj: 0.0,
                    seed: 0,
                },
            )
            .map_err(err)?;
            let cfg = SolverConfig {
                max_iters: 100_000,
                tol_grad_map: 1e-12,
                ..tight(lam)
            };
            let out = GatedSolver::new(&inst.x, &inst.y, &inst.gates, &cfg)
                .map_err(err)?
                .solve(Method::Rfista, lam, None)
                .map_err(err)?;
            for i in 0..g {
                for r in 0..d {
                    path_diff = path_diff
                        .max((pol.beta[(i * d + r, 0)] - out.solution.blocks[i][(r, 0)]).abs());
                }
            }
        }
    }
    let ok = monotone && prune_diff <= 1e-9 && path_diff <= 1e-8;
    Ok((
        ok,
        format!(
            "objective never above init {monotone}; prune diff {prune_diff:.1e}; alpha=1 path diff {path_diff:.1e}"
        ),
    ))
}

// 11 -----------------------------------------------------------------------

fn rank(x: &DenseMatrix<f64>) -> usize {
    let m = nalgebra::DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice());
    m.rank(1e-10)
}

fn enumeration() -> Check {
    let mut r = rng::seeded(11);
    let mut missing = 0usize;
    let mut over_bound = 0usize;
    let mut total = 0usize;
    for s in 0..20u64 {
        let n = uniform(&mut r, 1, 8);
        let d = uniform(&mut r, 1, 3);
        let x = random_matrix(n, d, 150_000 + s);
        let exhaustive: GateSet<f64> = enumerate_arrangements(&x, s).map_err(err)?;
        let found: BTreeSet<Vec<bool>> = exhaustive
            .patterns()
            .iter()
            .map(|p| p.mask().to_vec())
            .collect();
        total += found.len();
        if found.len() as u128 > pattern_count_bound(n, rank(&x)) {
            over_bound += 1;
        }
        let mut gr = rng::seeded(160_000 + s);
        let mut sampled = BTreeSet::new();
        for _ in 0..100_000 {
            let g: Vec<f64> = rng::normal_vec(&mut gr, d, 1.0);
            let mask: Vec<bool> = (0..n)
                .map(|j| x.row(j).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0)
                .collect();
            sampled.insert(mask);
        }
        missing += sampled.difference(&found).count();
    }
    Ok((
        missing == 0 && over_bound == 0,
        format!(
            "{total} exhaustive patterns; {missing} sampled patterns missing; {over_bound} counts above bound"
        ),
    ))
}

// 12 -----------------------------------------------------------------------

fn special_f32(r: &mut rng::Rng) -> f32 {
    const SPECIAL: [f32; 6] = [0.0, -0.0, f32::MIN_POSITIVE, 1e-42, f32::MAX, -f32::MAX];
    let u = uniform(r, 0, 19);
    if u < SPECIAL.len() {
        SPECIAL[u]
    } else {
        rng::normal::<f32>(r) * 10f32.powi(uniform(r, 0, 8) as i32 - 4)
    }
}

fn random_model(s: u64) -> Result<ModelSpec, String> {
    let mut r = rng::seeded(170_000 + s);
    if s.is_multiple_of(2) {
        let depth = uniform(&mut r, 1, 4);
        let widths: Vec<usize> = (0..=depth).map(|_| uniform(&mut r, 1, 9)).collect();
        let mut net = MLPNet::<f64>::init(&widths, s).map_err(err)?;
        // Awkward magnitudes stress the decimal round trip.
        for l in &mut net.layers {
            for v in l.weight.as_mut_slice() {
                *v *= 10f64.powi(uniform(&mut r, 0, 40) as i32 - 20);
            }
        }
        ModelSpec::new(widths[0], net.to_layer_specs()).map_err(err)
    } else {
        let (n, d, c) = (
            uniform(&mut r, 4, 20),
            uniform(&mut r, 1, 5),
            uniform(&mut r, 1, 3),
        );
        let inst = instance(n, d, c, uniform(&mut r, 1, 6), 180_000 + s);
        let sol: ConvexSolution<f64> = random_solution(&inst.gates, c, s);
        // The gates act on the lifted input, `d - 1` raw columns plus the bias.
        let raw = d.saturating_sub(1).max(1);
        let lift = InputLift {
            means: rng::normal_vec(&mut r, raw, 1.0),
            scales: rng::normal_vec::<f64>(&mut r, raw, 1.0)
                .into_iter()
                .map(|v| v.abs() + 0.1)
                .collect(),
            append_bias: d > 1,
        };
        let student = DistilledStudent::new(lift, recover_weights(&sol)).map_err(err)?;
        student.to_model_spec().map_err(err)
    }
}

fn bits(spec: &ModelSpec) -> Vec<u64> {
    let v = serde_json::to_value(spec).unwrap();
    let mut out = Vec::new();
    fn walk(v: &serde_json::Value, out: &mut Vec<u64>) {
        match v {
            serde_json::Value::Number(n) => out.push(n.as_f64().unwrap().to_bits()),
            serde_json::Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
            serde_json::Value::Object(o) => o.values().for_each(|x| walk(x, out)),
            _ => {}
        }
    }
    walk(&v, &mut out);
    out
}

fn formats() -> Check {
    let mut cvxa_ok = 0;
    let mut model_ok = 0;
    for s in 0..100u64 {
        let mut r = rng::seeded(190_000 + s);
        let (n, din, dout) = (
            uniform(&mut r, 1, 50),
            uniform(&mut r, 1, 12),
            uniform(&mut r, 1, 12),
        );
        let z: Vec<f32> = (0..n * din).map(|_| special_f32(&mut r)).collect();
        let t: Vec<f32> = (0..n * dout).map(|_| special_f32(&mut r)).collect();
        let ds = ActivationDataset::new(
            DenseMatrix::new(n, din, z.clone()).map_err(err)?,
            DenseMatrix::new(n, dout, t.clone()).map_err(err)?,
        )
        .map_err(err)?;
        let bytes = encode(&ds);
        let back = decode(&bytes).map_err(err)?;
        let same = back
            .z
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .eq(z.iter().map(|v| v.to_bits()))
            && back
                .t
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .eq(t.iter().map(|v| v.to_bits()))
            && encode(&back) == bytes;
        cvxa_ok += usize::from(same);

        let spec = random_model(s)?;
        let text = spec.to_json();
        let back = ModelSpec::from_json(&text).map_err(err)?;
        if back == spec && back.to_json() == text && bits(&back) == bits(&spec) {
            model_ok += 1;
        }
    }

    let (cli_ok, cli_total, cli_detail) = cli_matrix()?;
    Ok((
        cvxa_ok == 100 && model_ok == 100 && cli_ok == cli_total,
        format!(
            "cvxa {cvxa_ok}/100, model json {model_ok}/100 bit-exact; cli exit codes {cli_ok}/{cli_total}{cli_detail}"
        ),
    ))
}

fn cli_matrix() -> Result<(usize, usize, String), String> {
    let bin = env!("CARGO_BIN_EXE_cvxdistill");
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "not-a-flag = 3\n").map_err(err)?;
    std::fs::write(d.join("junk.cvxa"), b"JUNKJUNK").map_err(err)?;
    let task = "--classes 3 --dim 6 --train-per-class 40 --test-per-class 20";
    let cases: Vec<(String, i32)> = vec![
        (format!("teacher-train --out t --hidden 6,16,6 --epochs 5 {task}"), 0),
        ("extract --out e --model t/teacher.json --data t/train.csv".into(), 0),
        ("distill --out s --acts e/acts.cvxa --gates 6 --lambda-points 3".into(), 0),
        ("polish --out p --student s/student.json --acts e/acts.cvxa".into(), 0),
        ("swap-eval --out w --teacher t/teacher.json --student p/student.json --data t/test.csv".into(), 0),
        (
            "swap-eval --out w2 --teacher t/teacher.json --student s/student.json --data t/test.csv --block-start 1 --block-end 2"
                .into(),
            1,
        ),
        ("enumerate-gates --out g --n 6 --d 2".into(), 0),
        ("enumerate-gates --out g2 --n 30 --d 6".into(), 1),
        ("verify --tiny --out v".into(), 0),
        ("distill --bogus 1 --out x".into(), 2),
        ("distill --acts e/acts.cvxa".into(), 2),
        ("distill --out x --acts e/acts.cvxa --gates lots".into(), 2),
        ("distill --out x --acts e/acts.cvxa --config bad.cfg".into(), 2),
        ("distill --out x --acts e/acts.cvxa --config nowhere.cfg".into(), 2),
        ("distill --out x --acts junk.cvxa".into(), 1),
        ("distill --out x --acts nowhere.cvxa".into(), 1),
        ("distill --out x --acts e/acts.cvxa --gates 0".into(), 1),
        ("compare --out x --time-budget-factor 0.5".into(), 1),
        ("no-such-command --out x".into(), 2),
    ];
    let mut ok = 0;
    let mut bad = Vec::new();
    for (args, want) in &cases {
        let out = Command::new(bin)
            .args(args.split_whitespace())
            .current_dir(d)
            .env_remove("CVXDISTILL_SEED")
            .output()
            .map_err(err)?;
        let got = out.status.code().unwrap_or(-1);
        let diagnosed = *want == 0 || !out.stderr.is_empty();
        if got == *want && diagnosed {
            ok += 1;
        } else {
            bad.push(format!("`{args}` -> {got} (want {want})"));
        }
    }
    let detail = if bad.is_empty() {
        String::new()
    } else {
        format!(" [{}]", bad.join("; "))
    };
    Ok((ok, cases.len(), detail))
}

// --------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Check,
}

const CRITERIA: [Criterion; 12] = [
    Criterion {
        id: 1,
        name: "compression table arithmetic",
        limit_s: 1.0,
        run: table_arithmetic,
    },
    Criterion {
        id: 2,
        name: "weight recovery",
        limit_s: 5.0,
        run: recovery,
    },
    Criterion {
        id: 3,
        name: "balanced rescaling",
        limit_s: 5.0,
        run: rescaling,
    },
    Criterion {
        id: 4,
        name: "global optimality probe",
        limit_s: 120.0,
        run: optimality_probe,
    },
    Criterion {
        id: 5,
        name: "solver correctness",
        limit_s: 60.0,
        run: solver_correctness,
    },
    Criterion {
        id: 6,
        name: "one-vs-all structure",
        limit_s: 30.0,
        run: one_vs_all,
    },
    Criterion {
        id: 7,
        name: "label-free distillation",
        limit_s: 30.0,
        run: label_free,
    },
    Criterion {
        id: 8,
        name: "matched wall-time activation MSE",
        limit_s: 300.0,
        run: matched_time,
    },
    Criterion {
        id: 9,
        name: "sample-budget swap accuracy",
        limit_s: 600.0,
        run: sample_budgets,
    },
    Criterion {
        id: 10,
        name: "polishing",
        limit_s: 60.0,
        run: polishing,
    },
    Criterion {
        id: 11,
        name: "arrangement enumeration",
        limit_s: 60.0,
        run: enumeration,
    },
    Criterion {
        id: 12,
        name: "formats and exit codes",
        limit_s: 30.0,
        run: formats,
    },
];

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .expect("global pool is configured once");
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in CRITERIA
        .iter()
        .filter(|c| wanted.is_empty() || wanted.contains(&c.id))
    {
        let start = Instant::now();
        let result = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = secs <= c.limit_s;
        let pass = ok && in_time;
        failed += usize::from(!pass);
        println!(
            "{} {:>2} {}: {}; {:.1}s of {:.0}s{}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            secs,
            c.limit_s,
            if in_time { "" } else { " (over time)" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
