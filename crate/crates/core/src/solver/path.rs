use super::engine::LinearSmooth;
use super::problem::{
    GatedDesign, GatedLoss, GatedSolver, Loss, Method, SolveOutcome, SolverConfig,
};
use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::gates::GateSet;
use crate::scalar::Real;

/// Smallest `lambda` for which the zero solution is optimal under squared loss.
pub fn lambda_max<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
) -> Result<T> {
    lambda_max_for(x, y, gates, Loss::Squared)
}

/// Largest group norm of the smooth gradient at zero.
pub fn lambda_max_for<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
    loss: Loss,
) -> Result<T> {
    if x.rows() != y.rows() {
        return Err(Error::dims("target rows", x.rows(), y.rows()));
    }
    let design = GatedDesign::new(x, gates)?;
    let smooth = GatedLoss::new(&design, y, loss)?;
    let pred = vec![T::zero(); smooth.num_predictions()];
    let mut grad = vec![T::zero(); smooth.num_params()];
    smooth.gradient(&pred, &mut grad);
    let groups = gates.len() * y.cols();
    let mut sq = vec![T::zero(); groups];
    for row in grad.chunks(groups) {
        for (s, v) in sq.iter_mut().zip(row) {
            *s += *v * *v;
        }
    }
    Ok(sq.into_iter().fold(T::zero(), |m, s| m.max(s.sqrt())))
}

/// Geometric grid of `count` values from `lambda_max` down `decade_span` decades.
pub fn lambda_path(lambda_max: f64, count: usize, decade_span: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..count)
            .map(|j| lambda_max * 10f64.powf(-decade_span * j as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Solves along `lambdas` in the given order, warm-starting each point from the previous.
pub fn solve_path<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
    config: &SolverConfig,
    lambdas: &[f64],
) -> Result<Vec<SolveOutcome<T>>> {
    let solver = GatedSolver::new(x, y, gates, config)?;
    let mut out: Vec<SolveOutcome<T>> = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let warm = out.last().map(|o| &o.solution);
        out.push(solver.solve(Method::Rfista, lam, warm)?);
    }
    Ok(out)
}
