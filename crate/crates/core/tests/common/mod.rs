#![allow(dead_code)]

use cvxdistill::data::{rng, DenseMatrix};
use cvxdistill::gates::{sample_gaussian_gates, GateSet};
use cvxdistill::grelu::ConvexSolution;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
    let mut r = rng::seeded(seed);
    DenseMatrix::new(rows, cols, rng::normal_vec(&mut r, rows * cols, 1.0)).unwrap()
}

pub struct Instance {
    pub x: DenseMatrix<f64>,
    pub y: DenseMatrix<f64>,
    pub gates: GateSet<f64>,
}

pub fn instance(n: usize, d: usize, c: usize, gates: usize, seed: u64) -> Instance {
    let x = random_matrix(n, d, seed);
    let y = random_matrix(n, c, seed + 1_000_003);
    let gates = sample_gaussian_gates(&x, Some(gates), seed + 7).unwrap();
    Instance { x, y, gates }
}

pub fn random_solution(gates: &GateSet<f64>, c: usize, seed: u64) -> ConvexSolution<f64> {
    let blocks = (0..gates.len())
        .map(|i| random_matrix(gates.dim(), c, seed * 131 + i as u64))
        .collect();
    ConvexSolution::new(blocks, 0.0, gates.clone()).unwrap()
}

/// Prediction by explicit loops over samples and gates.
pub fn naive_predict(x: &DenseMatrix<f64>, sol: &ConvexSolution<f64>) -> Vec<Vec<f64>> {
    let c = sol.outputs();
    (0..x.rows())
        .map(|j| {
            let xj = x.row(j);
            let mut out = vec![0.0; c];
            for (i, gate) in sol.gates.gates().iter().enumerate() {
                let s: f64 = xj.iter().zip(gate.direction()).map(|(a, b)| a * b).sum();
                if s >= 0.0 {
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += (0..x.cols())
                            .map(|r| xj[r] * sol.blocks[i][(r, k)])
                            .sum::<f64>();
                    }
                }
            }
            out
        })
        .collect()
}

/// Squared-loss objective by explicit loops.
pub fn naive_objective(
    x: &DenseMatrix<f64>,
    y: &DenseMatrix<f64>,
    sol: &ConvexSolution<f64>,
    lambda: f64,
) -> f64 {
    let pred = naive_predict(x, sol);
    let n = x.rows() as f64;
    let mut loss = 0.0;
    for (j, p) in pred.iter().enumerate() {
        for (k, v) in p.iter().enumerate() {
            loss += (v - y[(j, k)]).powi(2);
        }
    }
    let mut pen = 0.0;
    for b in &sol.blocks {
        for k in 0..b.cols() {
            pen += b.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        }
    }
    loss / (2.0 * n) + lambda * pen
}
