//! Proximal gradient for `f(A p) + h(p)` where `f` is smooth and `A` linear.
//!
//! Predictions `A p` are cached and extrapolated linearly, so each iteration
//! costs one forward product per line-search trial plus one adjoint product.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, Real};

/// Smooth loss of a linear model.
pub trait LinearSmooth<T: Real> {
    fn num_params(&self) -> usize;
    fn num_predictions(&self) -> usize;
    fn predict(&self, params: &[T], out: &mut [T]);
    fn loss(&self, pred: &[T]) -> T;
    /// Gradient with respect to the parameters, given `pred = A params`.
    fn gradient(&self, pred: &[T], grad: &mut [T]);
    /// `f(z) - f(y) - <grad f(y), z - y>` given both predictions and the
    /// already computed terms. Override when a cancellation-free form exists.
    fn bregman_gap(&self, pred_y: &[T], pred_z: &[T], f_y: T, f_z: T, linear: T) -> T {
        let _ = (pred_y, pred_z);
        f_z - f_y - linear
    }
}

/// Separable non-smooth penalty with a closed-form proximal map.
pub trait Penalty<T: Real> {
    fn value(&self, params: &[T]) -> T;
    /// In-place `prox_{step * h}`.
    fn prox(&self, params: &mut [T], step: T);
    fn nonzero_groups(&self, params: &[T]) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions<T> {
    pub accelerated: bool,
    pub max_iters: usize,
    pub tol_grad_map: T,
    pub tol_rel_obj: T,
    /// Iterations over which the relative objective decrease is measured.
    pub stall_window: usize,
    pub backtrack: T,
    pub growth: T,
    pub initial_step: T,
    /// Growth never takes the step above this.
    pub max_step: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Gradient-mapping norm at the returned iterate is within tolerance.
    Converged,
    /// Objective decreased by less than the relative tolerance over the stall window.
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_map_norm: f64,
    pub step_size: f64,
    pub elapsed_ms: f64,
    pub nnz_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Appends another trace, shifting its iteration counter and clock.
    pub fn extend_shifted(&mut self, other: &SolverTrace) {
        let (iter0, t0) = self
            .records
            .last()
            .map_or((0, 0.0), |r| (r.iter, r.elapsed_ms));
        self.records
            .extend(other.records.iter().map(|r| TraceRecord {
                iter: r.iter + iter0,
                elapsed_ms: r.elapsed_ms + t0,
                ..r.clone()
            }));
    }
}

#[derive(Debug, Clone)]
pub struct ProxResult<T> {
    pub params: Vec<T>,
    pub objective: T,
    pub initial_objective: T,
    /// `||p - prox(p - s grad f(p))|| / s` at the returned iterate.
    pub grad_map_norm: T,
    pub step: T,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: SolverTrace,
}

fn gradient_map<T: Real, F: LinearSmooth<T>, P: Penalty<T>>(
    smooth: &F,
    penalty: &P,
    params: &[T],
    pred: &[T],
    step: T,
    grad: &mut [T],
    scratch: &mut [T],
) -> T {
    smooth.gradient(pred, grad);
    for ((s, p), g) in scratch.iter_mut().zip(params).zip(grad.iter()) {
        *s = *p - step * *g;
    }
    penalty.prox(scratch, step);
    let mut acc = T::zero();
    for (s, p) in scratch.iter().zip(params) {
        acc += (*s - *p) * (*s - *p);
    }
    acc.sqrt() / step
}

/// Runs ISTA (`accelerated = false`) or FISTA with function-value restart.
///
/// A step that raises the objective by more than rounding noise resets the
/// momentum and is discarded. Trace objectives are best-so-far values and the
/// returned iterate is the best one seen, up to rounding in the comparison.
pub fn proximal_gradient<T: Real, F: LinearSmooth<T>, P: Penalty<T>>(
    smooth: &F,
    penalty: &P,
    x0: &[T],
    opts: &ProxOptions<T>,
) -> ProxResult<T> {
    let start = Instant::now();
    let np = smooth.num_params();
    let nq = smooth.num_predictions();
    assert_eq!(x0.len(), np, "initial point has wrong length");

    let mut x = x0.to_vec();
    let mut px = vec![T::zero(); nq];
    smooth.predict(&x, &mut px);
    let mut big_fx = smooth.loss(&px) + penalty.value(&x);
    let initial_objective = big_fx;
    let mut best = (x.clone(), px.clone(), big_fx);

    let mut y = x.clone();
    let mut py = px.clone();
    let mut z = vec![T::zero(); np];
    let mut pz = vec![T::zero(); nq];
    let mut grad = vec![T::zero(); np];
    let mut scratch = vec![T::zero(); np];
    let mut momentum = T::one();
    let mut step = opts.initial_step;
    let min_step = T::min_positive_value().sqrt();
    let noise = |f: T| T::lit(16.0) * T::epsilon() * f.abs();
    let two = T::lit(2.0);
    let four = T::lit(4.0);

    let mut trace = SolverTrace::default();
    let mut history: Vec<T> = vec![big_fx];
    let mut stop = StopReason::MaxIters;
    let mut final_gm = None;
    let mut iterations = 0;

    for k in 1..=opts.max_iters {
        iterations = k;
        let fy = smooth.loss(&py);
        smooth.gradient(&py, &mut grad);
        let mut fz;
        loop {
            for ((zi, yi), gi) in z.iter_mut().zip(&y).zip(&grad) {
                *zi = *yi - step * *gi;
            }
            penalty.prox(&mut z, step);
            smooth.predict(&z, &mut pz);
            fz = smooth.loss(&pz);
            let mut lin = T::zero();
            let mut sq = T::zero();
            for ((zi, yi), gi) in z.iter().zip(&y).zip(&grad) {
                let d = *zi - *yi;
                lin += *gi * d;
                sq += d * d;
            }
            let gap = smooth.bregman_gap(&py, &pz, fy, fz, lin);
            if gap <= sq / (two * step) + noise(fy) || step <= min_step {
                break;
            }
            step *= opts.backtrack;
        }
        let gm_y = {
            let mut sq = T::zero();
            for (zi, yi) in z.iter().zip(&y) {
                sq += (*zi - *yi) * (*zi - *yi);
            }
            sq.sqrt() / step
        };
        let big_fz = fz + penalty.value(&z);

        let restart = opts.accelerated
            && if (big_fz - big_fx).abs() <= noise(big_fx) {
                // Objective change is rounding noise: restart when the step
                // points against the last move (gradient-map criterion).
                let mut acc = T::zero();
                for ((yi, zi), xi) in y.iter().zip(&z).zip(&x) {
                    acc += (*yi - *zi) * (*zi - *xi);
                }
                acc > T::zero()
            } else {
                big_fz > big_fx
            };
        if restart {
            momentum = T::one();
            y.copy_from_slice(&x);
            py.copy_from_slice(&px);
        } else {
            if opts.accelerated {
                let next = (T::one() + (T::one() + four * momentum * momentum).sqrt()) / two;
                let beta = (momentum - T::one()) / next;
                momentum = next;
                for ((yi, zi), xi) in y.iter_mut().zip(&z).zip(&x) {
                    *yi = *zi + beta * (*zi - *xi);
                }
                for ((yi, zi), xi) in py.iter_mut().zip(&pz).zip(&px) {
                    *yi = *zi + beta * (*zi - *xi);
                }
            } else {
                y.copy_from_slice(&z);
                py.copy_from_slice(&pz);
            }
            std::mem::swap(&mut x, &mut z);
            std::mem::swap(&mut px, &mut pz);
            big_fx = big_fz;
            // Ties within rounding go to the newer, more stationary iterate.
            if big_fx <= best.2 + noise(best.2) {
                best.0.copy_from_slice(&x);
                best.1.copy_from_slice(&px);
                best.2 = best.2.min(big_fx);
            }
        }
        history.push(best.2);
        trace.records.push(TraceRecord {
            iter: k,
            objective: best.2.as_f64(),
            grad_map_norm: gm_y.as_f64(),
            step_size: step.as_f64(),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            nnz_groups: penalty.nonzero_groups(&best.0),
        });

        if gm_y <= opts.tol_grad_map {
            let gm = gradient_map(
                smooth,
                penalty,
                &best.0,
                &best.1,
                step,
                &mut grad,
                &mut scratch,
            );
            if gm <= opts.tol_grad_map {
                final_gm = Some(gm);
                stop = StopReason::Converged;
                break;
            }
        }
        if opts.stall_window > 0 && history.len() > opts.stall_window {
            let then = history[history.len() - 1 - opts.stall_window];
            if then - best.2 < opts.tol_rel_obj * best.2.abs() {
                stop = StopReason::Stalled;
                break;
            }
        }
        step = (step * opts.growth).min(opts.max_step);
    }
    let (params, pred, objective) = best;
    let grad_map_norm = final_gm.unwrap_or_else(|| {
        gradient_map(
            smooth,
            penalty,
            &params,
            &pred,
            step,
            &mut grad,
            &mut scratch,
        )
    });
    ProxResult {
        params,
        objective,
        initial_objective,
        grad_map_norm,
        step,
        iterations,
        stop,
        trace,
    }
}

/// Largest eigenvalue of `A^T A` scaled as the smooth part sees it, by power
/// iteration on `grad(A u)` for a quadratic loss. `apply_gram` must map
/// `u -> A^T A u` (with any constant scaling folded in).
pub fn power_iteration<T: Real>(
    dim: usize,
    iters: usize,
    seed: u64,
    mut apply_gram: impl FnMut(&[T], &mut [T]),
) -> T {
    let mut r = crate::data::rng::seeded(seed);
    let mut u: Vec<T> = crate::data::rng::normal_vec(&mut r, dim, 1.0);
    let mut w = vec![T::zero(); dim];
    let mut est = T::zero();
    for _ in 0..iters {
        let nu = norm2(&u);
        if nu.is_zero() {
            return T::zero();
        }
        for v in &mut u {
            *v /= nu;
        }
        apply_gram(&u, &mut w);
        est = dot(&u, &w);
        std::mem::swap(&mut u, &mut w);
    }
    est.max(T::zero())
}
