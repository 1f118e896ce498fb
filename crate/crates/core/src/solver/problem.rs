//! The convex gated problem: `loss(sum_i D_i X V_i, Y) + lambda sum_{i,k} ||v_i^k||`.
//!
//! Parameters are stored as one `d x (G C)` row-major matrix: entry `(r, i, k)`
//! sits at `r G C + i C + k`, so `X V` is a single product.

use serde::{Deserialize, Serialize};

use super::engine::{
    power_iteration, proximal_gradient, LinearSmooth, Penalty, ProxOptions, SolverTrace, StopReason,
};
use super::gram::GramLoss;
use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::gates::GateSet;
use crate::grelu::{ConvexSolution, ZERO_BLOCK_NORM};
use crate::scalar::Real;

/// Target element budget for one chunk of the gated forward product.
const CHUNK_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    Squared,
    /// Per-column logistic loss on `+-1` targets; positive entries are the positive class.
    Logistic,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "logistic" => Ok(Self::Logistic),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub loss: Loss,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol_rel_obj: f64,
    pub tol_grad_map: f64,
    pub backtrack_factor: f64,
    pub growth_factor: f64,
    pub power_iters: usize,
    /// Window for the relative-objective stall test.
    pub stall_window: usize,
    pub seed: u64,
    /// Squared loss only: iterate on a precomputed Gram matrix when it fits in memory.
    pub gram: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Squared,
            lambda: 1e-3,
            max_iters: 2000,
            tol_rel_obj: 1e-8,
            tol_grad_map: 1e-7,
            backtrack_factor: 0.8,
            growth_factor: 1.25,
            power_iters: 20,
            stall_window: 50,
            seed: 0,
            gram: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.growth_factor >= 1.0 && self.growth_factor.is_finite()) {
            return bad("growth factor must be >= 1");
        }
        if !(self.tol_rel_obj >= 0.0 && self.tol_grad_map >= 0.0) {
            return bad("tolerances must be >= 0");
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

/// `X` together with the gate masks, applying `V -> sum_i D_i X V_i` and its adjoint.
#[derive(Debug, Clone)]
pub struct GatedDesign<T> {
    x: DenseMatrix<T>,
    /// `n x G`, row-major; 1 where sample `j` is active for gate `i`.
    mask: Vec<bool>,
    gates: usize,
}

impl<T: Real> GatedDesign<T> {
    pub fn new(x: &DenseMatrix<T>, gates: &GateSet<T>) -> Result<Self> {
        if gates.is_empty() {
            return Err(Error::EmptyGateSet);
        }
        let masks = gates.masks_for(x)?;
        Ok(Self::from_masks(x.clone(), &masks))
    }

    /// `masks[i][j]` is whether sample `j` is active under gate `i`.
    pub fn from_masks(x: DenseMatrix<T>, masks: &[Vec<bool>]) -> Self {
        let n = x.rows();
        let g = masks.len();
        let mut mask = vec![false; n * g];
        for (i, m) in masks.iter().enumerate() {
            assert_eq!(m.len(), n, "mask length must equal sample count");
            for (j, &on) in m.iter().enumerate() {
                mask[j * g + i] = on;
            }
        }
        Self { x, mask, gates: g }
    }

    pub fn samples(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn gates(&self) -> usize {
        self.gates
    }

    /// Rows `j0..j1` of the explicit design, columns ordered `(r, i)`.
    pub(crate) fn fill_rows(&self, j0: usize, j1: usize, out: &mut [T]) {
        let (d, g) = (self.dim(), self.gates);
        for (lj, j) in (j0..j1).enumerate() {
            let xr = self.x.row(j);
            let row = &mut out[lj * d * g..(lj + 1) * d * g];
            for (r, &xv) in xr.iter().enumerate() {
                for i in 0..g {
                    row[r * g + i] = if self.mask[j * g + i] { xv } else { T::zero() };
                }
            }
        }
    }

    fn chunk(&self, c: usize) -> usize {
        (CHUNK_ELEMS / (self.samples() * c).max(1)).clamp(1, self.gates)
    }

    /// `out (n x c) = sum_i D_i X V_i` with `params` in the `d x (G c)` layout.
    pub fn apply(&self, params: &[T], c: usize, out: &mut [T]) {
        let (n, d, g) = (self.samples(), self.dim(), self.gates);
        debug_assert_eq!(params.len(), d * g * c);
        debug_assert_eq!(out.len(), n * c);
        out.iter_mut().for_each(|o| *o = T::zero());
        let chunk = self.chunk(c);
        let mut tmp = vec![T::zero(); n * chunk * c];
        let mut g0 = 0;
        while g0 < g {
            let g1 = (g0 + chunk).min(g);
            let w = (g1 - g0) * c;
            T::gemm(
                n,
                d,
                w,
                T::one(),
                self.x.as_slice(),
                d as isize,
                1,
                &params[g0 * c..],
                (g * c) as isize,
                1,
                T::zero(),
                &mut tmp,
                w as isize,
                1,
            );
            for j in 0..n {
                let row = &tmp[j * w..(j + 1) * w];
                let dst = &mut out[j * c..(j + 1) * c];
                for (li, i) in (g0..g1).enumerate() {
                    if self.mask[j * g + i] {
                        for (o, v) in dst.iter_mut().zip(&row[li * c..(li + 1) * c]) {
                            *o += *v;
                        }
                    }
                }
            }
            g0 = g1;
        }
    }

    /// `grad (d x G c)`: block `i` receives `(D_i X)^T r` for `r` of shape `n x c`.
    pub fn adjoint(&self, r: &[T], c: usize, grad: &mut [T]) {
        let (n, d, g) = (self.samples(), self.dim(), self.gates);
        debug_assert_eq!(r.len(), n * c);
        debug_assert_eq!(grad.len(), d * g * c);
        let chunk = self.chunk(c);
        let mut expanded = vec![T::zero(); n * chunk * c];
        let mut g0 = 0;
        while g0 < g {
            let g1 = (g0 + chunk).min(g);
            let w = (g1 - g0) * c;
            for j in 0..n {
                let src = &r[j * c..(j + 1) * c];
                let row = &mut expanded[j * w..(j + 1) * w];
                for (li, i) in (g0..g1).enumerate() {
                    let dst = &mut row[li * c..(li + 1) * c];
                    if self.mask[j * g + i] {
                        dst.copy_from_slice(src);
                    } else {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                    }
                }
            }
            T::gemm(
                d,
                n,
                w,
                T::one(),
                self.x.as_slice(),
                1,
                d as isize,
                &expanded,
                w as isize,
                1,
                T::zero(),
                &mut grad[g0 * c..],
                (g * c) as isize,
                1,
            );
            g0 = g1;
        }
    }

    /// Largest eigenvalue of `(1/n) A^T A` for the single-output design `A`.
    pub fn gram_spectral_norm(&self, iters: usize, seed: u64) -> T {
        let n = self.samples();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut pred = vec![T::zero(); n];
        power_iteration(self.dim() * self.gates, iters, seed, |u, w| {
            self.apply(u, 1, &mut pred);
            self.adjoint(&pred, 1, w);
            w.iter_mut().for_each(|v| *v *= inv_n);
        })
    }
}

/// Smooth part of the gated problem for fixed targets.
pub struct GatedLoss<'a, T> {
    design: &'a GatedDesign<T>,
    targets: Vec<T>,
    outputs: usize,
    loss: Loss,
}

impl<'a, T: Real> GatedLoss<'a, T> {
    pub fn new(design: &'a GatedDesign<T>, y: &DenseMatrix<T>, loss: Loss) -> Result<Self> {
        if y.rows() != design.samples() {
            return Err(Error::dims("target rows", design.samples(), y.rows()));
        }
        let targets = match loss {
            Loss::Squared => y.as_slice().to_vec(),
            Loss::Logistic => y
                .as_slice()
                .iter()
                .map(|&v| if v > T::zero() { T::one() } else { -T::one() })
                .collect(),
        };
        Ok(Self {
            design,
            targets,
            outputs: y.cols(),
            loss,
        })
    }

    /// Lipschitz constant of the gradient, from power iteration.
    pub fn lipschitz(&self, iters: usize, seed: u64) -> T {
        let l = self.design.gram_spectral_norm(iters, seed);
        match self.loss {
            Loss::Squared => l,
            Loss::Logistic => l * T::lit(0.25),
        }
    }

    fn inv_n(&self) -> T {
        T::one() / T::from_usize_lossy(self.design.samples())
    }
}

fn softplus<T: Real>(t: T) -> T {
    t.max(T::zero()) + (-t.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> LinearSmooth<T> for GatedLoss<'_, T> {
    fn num_params(&self) -> usize {
        self.design.dim() * self.design.gates() * self.outputs
    }

    fn num_predictions(&self) -> usize {
        self.design.samples() * self.outputs
    }

    fn predict(&self, params: &[T], out: &mut [T]) {
        self.design.apply(params, self.outputs, out);
    }

    fn loss(&self, pred: &[T]) -> T {
        let mut acc = T::zero();
        match self.loss {
            Loss::Squared => {
                for (p, y) in pred.iter().zip(&self.targets) {
                    acc += (*p - *y) * (*p - *y);
                }
                acc * self.inv_n() * T::lit(0.5)
            }
            Loss::Logistic => {
                for (p, y) in pred.iter().zip(&self.targets) {
                    acc += softplus(-*y * *p);
                }
                acc * self.inv_n()
            }
        }
    }

    fn gradient(&self, pred: &[T], grad: &mut [T]) {
        let inv_n = self.inv_n();
        let r: Vec<T> = match self.loss {
            Loss::Squared => pred
                .iter()
                .zip(&self.targets)
                .map(|(p, y)| (*p - *y) * inv_n)
                .collect(),
            Loss::Logistic => pred
                .iter()
                .zip(&self.targets)
                .map(|(p, y)| -*y * sigmoid(-*y * *p) * inv_n)
                .collect(),
        };
        self.design.adjoint(&r, self.outputs, grad);
    }

    fn bregman_gap(&self, pred_y: &[T], pred_z: &[T], f_y: T, f_z: T, linear: T) -> T {
        match self.loss {
            Loss::Squared => {
                let mut acc = T::zero();
                for (a, b) in pred_y.iter().zip(pred_z) {
                    acc += (*b - *a) * (*b - *a);
                }
                acc * self.inv_n() * T::lit(0.5)
            }
            Loss::Logistic => f_z - f_y - linear,
        }
    }
}

/// `lambda sum_{i,k} ||v_i^k||` over the `d x (G c)` layout.
#[derive(Debug, Clone, Copy)]
pub struct GroupLasso<T> {
    pub lambda: T,
    pub dim: usize,
    pub groups: usize,
}

impl<T: Real> GroupLasso<T> {
    fn norms(&self, params: &[T]) -> Vec<T> {
        let stride = self.groups;
        let mut sq = vec![T::zero(); stride];
        for r in 0..self.dim {
            for (s, v) in sq.iter_mut().zip(&params[r * stride..(r + 1) * stride]) {
                *s += *v * *v;
            }
        }
        sq.into_iter().map(T::sqrt).collect()
    }
}

impl<T: Real> Penalty<T> for GroupLasso<T> {
    fn value(&self, params: &[T]) -> T {
        self.lambda * self.norms(params).into_iter().sum::<T>()
    }

    fn prox(&self, params: &mut [T], step: T) {
        let thr = self.lambda * step;
        if thr.is_zero() {
            return;
        }
        let scales: Vec<T> = self
            .norms(params)
            .into_iter()
            .map(|nrm| {
                if nrm <= thr {
                    T::zero()
                } else {
                    T::one() - thr / nrm
                }
            })
            .collect();
        for row in params.chunks_mut(self.groups) {
            for (v, s) in row.iter_mut().zip(&scales) {
                *v *= *s;
            }
        }
    }

    fn nonzero_groups(&self, params: &[T]) -> usize {
        let tol = T::lit(ZERO_BLOCK_NORM);
        self.norms(params).into_iter().filter(|&n| n >= tol).count()
    }
}

/// In-place block soft-thresholding of one group.
pub fn prox_group_l2<T: Real>(v: &mut [T], threshold: T) {
    let nrm = crate::scalar::norm2(v);
    if nrm <= threshold {
        v.iter_mut().for_each(|x| *x = T::zero());
    } else if threshold > T::zero() {
        let s = T::one() - threshold / nrm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Applies [`prox_group_l2`] to every column of every block.
pub fn prox_blocks<T: Real>(blocks: &mut [DenseMatrix<T>], threshold: T) {
    for b in blocks {
        for k in 0..b.cols() {
            let mut col = b.column(k);
            prox_group_l2(&mut col, threshold);
            b.set_column(k, &col);
        }
    }
}

pub(crate) fn pack<T: Real>(blocks: &[DenseMatrix<T>], d: usize, c: usize) -> Vec<T> {
    let g = blocks.len();
    let mut p = vec![T::zero(); d * g * c];
    for (i, b) in blocks.iter().enumerate() {
        for r in 0..d {
            p[r * g * c + i * c..r * g * c + (i + 1) * c].copy_from_slice(b.row(r));
        }
    }
    p
}

pub(crate) fn unpack<T: Real>(p: &[T], d: usize, g: usize, c: usize) -> Vec<DenseMatrix<T>> {
    (0..g)
        .map(|i| DenseMatrix::from_fn(d, c, |r, k| p[r * g * c + i * c + k]))
        .collect()
}

fn check_shapes<T: Real>(x: &DenseMatrix<T>, y: &DenseMatrix<T>, gates: &GateSet<T>) -> Result<()> {
    if x.cols() != gates.dim() {
        return Err(Error::dims(
            "input dimension vs gates",
            gates.dim(),
            x.cols(),
        ));
    }
    if y.rows() != x.rows() {
        return Err(Error::dims("target rows", x.rows(), y.rows()));
    }
    if x.rows() == 0 {
        return Err(Error::NoRows);
    }
    Ok(())
}

fn check_solution<T: Real>(solution: &ConvexSolution<T>, y: &DenseMatrix<T>) -> Result<()> {
    if solution.outputs() != y.cols() {
        return Err(Error::dims(
            "solution outputs",
            y.cols(),
            solution.outputs(),
        ));
    }
    Ok(())
}

/// Full objective value at `solution`, with masks recomputed on `x`.
pub fn objective<T: Real>(
    solution: &ConvexSolution<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    config: &SolverConfig,
) -> Result<T> {
    check_shapes(x, y, &solution.gates)?;
    check_solution(solution, y)?;
    let design = GatedDesign::new(x, &solution.gates)?;
    let smooth = GatedLoss::new(&design, y, config.loss)?;
    let params = pack(&solution.blocks, x.cols(), y.cols());
    let mut pred = vec![T::zero(); smooth.num_predictions()];
    smooth.predict(&params, &mut pred);
    let pen = GroupLasso {
        lambda: T::lit(config.lambda),
        dim: x.cols(),
        groups: solution.gates.len() * y.cols(),
    };
    Ok(smooth.loss(&pred) + pen.value(&params))
}

/// Gradient of the smooth part, one `d x C` block per gate.
pub fn smooth_gradient<T: Real>(
    solution: &ConvexSolution<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    config: &SolverConfig,
) -> Result<Vec<DenseMatrix<T>>> {
    check_shapes(x, y, &solution.gates)?;
    check_solution(solution, y)?;
    let design = GatedDesign::new(x, &solution.gates)?;
    let smooth = GatedLoss::new(&design, y, config.loss)?;
    let (d, c) = (x.cols(), y.cols());
    let params = pack(&solution.blocks, d, c);
    let mut pred = vec![T::zero(); smooth.num_predictions()];
    smooth.predict(&params, &mut pred);
    let mut grad = vec![T::zero(); params.len()];
    smooth.gradient(&pred, &mut grad);
    Ok(unpack(&grad, d, solution.gates.len(), c))
}

/// Result of one convex solve with its diagnostics.
#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub solution: ConvexSolution<T>,
    pub trace: SolverTrace,
    pub objective: T,
    pub grad_map_norm: T,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ista,
    #[default]
    Rfista,
}

/// Solver bound to a fixed design and targets, reusable across `lambda` values.
pub struct GatedSolver<'a, T> {
    gates: &'a GateSet<T>,
    design: GatedDesign<T>,
    gram: Option<GramLoss<T>>,
    y: DenseMatrix<T>,
    step0: T,
    config: SolverConfig,
}

impl<'a, T: Real> GatedSolver<'a, T> {
    pub fn new(
        x: &DenseMatrix<T>,
        y: &DenseMatrix<T>,
        gates: &'a GateSet<T>,
        config: &SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_shapes(x, y, gates)?;
        let design = GatedDesign::new(x, gates)?;
        let gram = if config.gram && config.loss == Loss::Squared {
            GramLoss::new(&design, y)?
        } else {
            None
        };
        let lip = match &gram {
            Some(g) => g.lipschitz(config.power_iters, config.seed),
            None => {
                GatedLoss::new(&design, y, config.loss)?.lipschitz(config.power_iters, config.seed)
            }
        };
        let step0 = if lip > T::zero() {
            T::one() / lip
        } else {
            T::one()
        };
        Ok(Self {
            gates,
            design,
            gram,
            y: y.clone(),
            step0,
            config: config.clone(),
        })
    }

    pub fn initial_step(&self) -> T {
        self.step0
    }

    pub fn solve(
        &self,
        method: Method,
        lambda: f64,
        init: Option<&ConvexSolution<T>>,
    ) -> Result<SolveOutcome<T>> {
        let (d, c, g) = (self.design.dim(), self.y.cols(), self.gates.len());
        let smooth = GatedLoss::new(&self.design, &self.y, self.config.loss)?;
        let pen = GroupLasso {
            lambda: T::lit(lambda),
            dim: d,
            groups: g * c,
        };
        let x0 = match init {
            Some(s) => {
                if s.blocks.len() != g || s.input_dim() != d || s.outputs() != c {
                    return Err(Error::InvalidArgument(
                        "warm start has the wrong shape".into(),
                    ));
                }
                pack(&s.blocks, d, c)
            }
            None => vec![T::zero(); d * g * c],
        };
        let opts = ProxOptions {
            accelerated: method == Method::Rfista,
            max_iters: self.config.max_iters,
            tol_grad_map: T::lit(self.config.tol_grad_map),
            tol_rel_obj: T::lit(self.config.tol_rel_obj),
            stall_window: self.config.stall_window,
            backtrack: T::lit(self.config.backtrack_factor),
            growth: T::lit(self.config.growth_factor),
            initial_step: self.step0,
            max_step: self.step0,
        };
        let res = match &self.gram {
            Some(g) => proximal_gradient(g, &pen, &x0, &opts),
            None => proximal_gradient(&smooth, &pen, &x0, &opts),
        };
        if !res.objective.is_finite() {
            return Err(Error::Divergence {
                iter: res.iterations,
            });
        }
        let solution = ConvexSolution::new(
            unpack(&res.params, d, g, c),
            T::lit(lambda),
            self.gates.clone(),
        )?;
        Ok(SolveOutcome {
            solution,
            trace: res.trace,
            objective: res.objective,
            grad_map_norm: res.grad_map_norm,
            iterations: res.iterations,
            stop: res.stop,
        })
    }
}

pub fn solve_ista<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
    config: &SolverConfig,
) -> Result<(ConvexSolution<T>, SolverTrace)> {
    let out = GatedSolver::new(x, y, gates, config)?.solve(Method::Ista, config.lambda, None)?;
    Ok((out.solution, out.trace))
}

pub fn solve_rfista<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
    config: &SolverConfig,
) -> Result<(ConvexSolution<T>, SolverTrace)> {
    let out = GatedSolver::new(x, y, gates, config)?.solve(Method::Rfista, config.lambda, None)?;
    Ok((out.solution, out.trace))
}

/// Solves each output column as its own scalar problem and stacks the results.
pub fn solve_one_vs_all<T: Real>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    gates: &GateSet<T>,
    config: &SolverConfig,
    method: Method,
) -> Result<ConvexSolution<T>> {
    use rayon::prelude::*;
    let per_class = (0..y.cols())
        .into_par_iter()
        .map(|k| {
            let yk = y.select_columns(&[k]);
            GatedSolver::new(x, &yk, gates, config)?
                .solve(method, config.lambda, None)
                .map(|o| o.solution)
        })
        .collect::<Result<Vec<_>>>()?;
    crate::grelu::assemble_one_vs_all(&per_class)
}
