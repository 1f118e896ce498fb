//! Refits the second layer of a gated student under a multi-response group
//! elastic net with the first layer frozen. Zeroed groups delete hidden units.

use serde::{Deserialize, Serialize};

use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::grelu::{GReLUStudent, ZERO_BLOCK_NORM};
use crate::scalar::{norm2, Real};
use crate::solver::{
    engine::power_iteration, proximal_gradient, LinearSmooth, Penalty, ProxOptions, SolverTrace,
    StopReason,
};

/// Frozen hidden features with targets and the group structure over rows of `beta`.
#[derive(Debug, Clone)]
pub struct PolishProblem<T> {
    /// `n x m` gated hidden activations.
    pub features: DenseMatrix<T>,
    /// `n x C`
    pub targets: DenseMatrix<T>,
    /// Partition of `0..m`; each group's rows of `beta` are penalized jointly.
    pub groups: Vec<Vec<usize>>,
    /// One factor per group.
    pub weights: Vec<T>,
    pub fit_intercept: bool,
    /// Added to every prediction; `n x C`.
    pub offset: Option<DenseMatrix<T>>,
    /// Starting coefficients, `m x C`.
    pub beta_init: DenseMatrix<T>,
    pub intercept_init: Vec<T>,
}

impl<T: Real> PolishProblem<T> {
    pub fn new(features: DenseMatrix<T>, targets: DenseMatrix<T>) -> Result<Self> {
        if features.rows() != targets.rows() {
            return Err(Error::dims(
                "polish target rows",
                features.rows(),
                targets.rows(),
            ));
        }
        let (m, c) = (features.cols(), targets.cols());
        Ok(Self {
            groups: (0..m).map(|j| vec![j]).collect(),
            weights: vec![T::one(); m],
            fit_intercept: true,
            offset: None,
            beta_init: DenseMatrix::zeros(m, c),
            intercept_init: vec![T::zero(); c],
            features,
            targets,
        })
    }

    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Result<Self> {
        let m = self.features.cols();
        let mut seen = vec![false; m];
        for &j in groups.iter().flatten() {
            if j >= m || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidArgument(format!(
                    "groups do not partition 0..{m}"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "groups do not partition 0..{m}"
            )));
        }
        self.weights = vec![T::one(); groups.len()];
        self.groups = groups;
        Ok(self)
    }

    pub fn hidden(&self) -> usize {
        self.features.cols()
    }

    pub fn outputs(&self) -> usize {
        self.targets.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.groups.len() || self.weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::InvalidArgument(
                "one non-negative weight per group required".into(),
            ));
        }
        if self.beta_init.shape() != (self.hidden(), self.outputs()) {
            return Err(Error::dims(
                "initial coefficient rows",
                self.hidden(),
                self.beta_init.rows(),
            ));
        }
        if self.intercept_init.len() != self.outputs() {
            return Err(Error::dims(
                "initial intercept",
                self.outputs(),
                self.intercept_init.len(),
            ));
        }
        if let Some(o) = &self.offset {
            if o.shape() != self.targets.shape() {
                return Err(Error::dims("offset columns", self.outputs(), o.cols()));
            }
        }
        Ok(())
    }
}

/// Features of `student` on `x`, initialized at its current second layer.
pub fn build_polish_problem<T: Real>(
    student: &GReLUStudent<T>,
    x: &DenseMatrix<T>,
    targets: &DenseMatrix<T>,
) -> Result<PolishProblem<T>> {
    if student.hidden() == 0 {
        return Err(Error::EmptyStudent);
    }
    let mut prob = PolishProblem::new(student.hidden_features(x)?, targets.clone())?;
    if student.outputs() != targets.cols() {
        return Err(Error::dims(
            "student outputs",
            targets.cols(),
            student.outputs(),
        ));
    }
    prob.beta_init = student.w2.clone();
    prob.intercept_init = student.output_bias.clone();
    Ok(prob)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolishConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol_grad_map: f64,
    pub tol_rel_obj: f64,
    pub seed: u64,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1e-3,
            max_iters: 2000,
            tol_grad_map: 1e-7,
            tol_rel_obj: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolishResult<T> {
    pub beta: DenseMatrix<T>,
    pub intercept: Vec<T>,
    pub objective: T,
    pub initial_objective: T,
    pub stop: StopReason,
    pub trace: SolverTrace,
}

/// Parameters are `beta` (`m x C`, row-major) followed by the intercept.
struct PolishLoss<'a, T> {
    prob: &'a PolishProblem<T>,
}

impl<T: Real> PolishLoss<'_, T> {
    fn inv_n(&self) -> T {
        T::one() / T::from_usize_lossy(self.prob.features.rows())
    }
}

/// `out (n x c) = F beta + 1 b0^T` for `params = [beta (m x c); b0]`.
fn design_apply<T: Real>(
    features: &DenseMatrix<T>,
    intercept: bool,
    params: &[T],
    c: usize,
    out: &mut [T],
) {
    let (n, m) = features.shape();
    T::gemm(
        n,
        m,
        c,
        T::one(),
        features.as_slice(),
        m as isize,
        1,
        params,
        c as isize,
        1,
        T::zero(),
        out,
        c as isize,
        1,
    );
    if intercept {
        let b0 = &params[m * c..];
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(b0) {
                *o += *b;
            }
        }
    }
}

/// Adjoint of [`design_apply`].
fn design_adjoint<T: Real>(
    features: &DenseMatrix<T>,
    intercept: bool,
    r: &[T],
    c: usize,
    grad: &mut [T],
) {
    let (n, m) = features.shape();
    T::gemm(
        m,
        n,
        c,
        T::one(),
        features.as_slice(),
        1,
        m as isize,
        r,
        c as isize,
        1,
        T::zero(),
        &mut grad[..m * c],
        c as isize,
        1,
    );
    let gb = &mut grad[m * c..];
    gb.iter_mut().for_each(|g| *g = T::zero());
    if intercept {
        for row in r.chunks(c) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += *v;
            }
        }
    }
}

impl<T: Real> LinearSmooth<T> for PolishLoss<'_, T> {
    fn num_params(&self) -> usize {
        (self.prob.hidden() + 1) * self.prob.outputs()
    }

    fn num_predictions(&self) -> usize {
        self.prob.targets.as_slice().len()
    }

    fn predict(&self, params: &[T], out: &mut [T]) {
        design_apply(
            &self.prob.features,
            self.prob.fit_intercept,
            params,
            self.prob.outputs(),
            out,
        );
        if let Some(o) = &self.prob.offset {
            for (p, v) in out.iter_mut().zip(o.as_slice()) {
                *p += *v;
            }
        }
    }

    fn loss(&self, pred: &[T]) -> T {
        let mut acc = T::zero();
        for (p, y) in pred.iter().zip(self.prob.targets.as_slice()) {
            acc += (*p - *y) * (*p - *y);
        }
        acc * self.inv_n() * T::lit(0.5)
    }

    fn gradient(&self, pred: &[T], grad: &mut [T]) {
        let inv_n = self.inv_n();
        let r: Vec<T> = pred
            .iter()
            .zip(self.prob.targets.as_slice())
            .map(|(p, y)| (*p - *y) * inv_n)
            .collect();
        design_adjoint(
            &self.prob.features,
            self.prob.fit_intercept,
            &r,
            self.prob.outputs(),
            grad,
        );
    }

    fn bregman_gap(&self, pred_y: &[T], pred_z: &[T], _: T, _: T, _: T) -> T {
        let mut acc = T::zero();
        for (a, b) in pred_y.iter().zip(pred_z) {
            acc += (*b - *a) * (*b - *a);
        }
        acc * self.inv_n() * T::lit(0.5)
    }
}

/// `lambda sum_g w_g (alpha ||beta_g|| + (1 - alpha)/2 ||beta_g||^2)`; the intercept is free.
#[derive(Debug, Clone)]
pub struct GroupElastic<'a, T> {
    pub groups: &'a [Vec<usize>],
    pub weights: &'a [T],
    pub outputs: usize,
    pub alpha: T,
    pub lambda: T,
}

impl<T: Real> GroupElastic<'_, T> {
    fn group_sq(&self, params: &[T], g: &[usize]) -> T {
        let c = self.outputs;
        g.iter()
            .flat_map(|&j| &params[j * c..(j + 1) * c])
            .map(|v| *v * *v)
            .sum()
    }
}

/// In-place group elastic-net prox with `l1 = alpha lambda w s`, `l2 = (1 - alpha) lambda w s`.
pub fn prox_group_elastic<T: Real>(v: &mut [T], l1: T, l2: T) {
    let nrm = norm2(v);
    let shrink = if nrm <= l1 {
        T::zero()
    } else {
        T::one() - l1 / nrm
    };
    let s = shrink / (T::one() + l2);
    v.iter_mut().for_each(|x| *x *= s);
}

impl<T: Real> Penalty<T> for GroupElastic<'_, T> {
    fn value(&self, params: &[T]) -> T {
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for (g, w) in self.groups.iter().zip(self.weights) {
            let sq = self.group_sq(params, g);
            acc += *w * (self.alpha * sq.sqrt() + (T::one() - self.alpha) * half * sq);
        }
        self.lambda * acc
    }

    fn prox(&self, params: &mut [T], step: T) {
        let c = self.outputs;
        let mut buf = Vec::new();
        for (g, w) in self.groups.iter().zip(self.weights) {
            let l1 = self.alpha * self.lambda * *w * step;
            let l2 = (T::one() - self.alpha) * self.lambda * *w * step;
            if l1.is_zero() && l2.is_zero() {
                continue;
            }
            buf.clear();
            for &j in g {
                buf.extend_from_slice(&params[j * c..(j + 1) * c]);
            }
            prox_group_elastic(&mut buf, l1, l2);
            for (k, &j) in g.iter().enumerate() {
                params[j * c..(j + 1) * c].copy_from_slice(&buf[k * c..(k + 1) * c]);
            }
        }
    }

    fn nonzero_groups(&self, params: &[T]) -> usize {
        let tol = T::lit(ZERO_BLOCK_NORM);
        self.groups
            .iter()
            .filter(|g| self.group_sq(params, g).sqrt() >= tol)
            .count()
    }
}

/// Largest `lambda` at which every group is zero for `alpha = 1`, intercept refitted.
pub fn polish_lambda_max<T: Real>(prob: &PolishProblem<T>) -> T {
    let (m, c) = (prob.hidden(), prob.outputs());
    let smooth = PolishLoss { prob };
    let mut params = vec![T::zero(); (m + 1) * c];
    if prob.fit_intercept {
        // Intercept-only fit: column means of the targets minus the offset.
        let inv_n = T::one() / T::from_usize_lossy(prob.targets.rows());
        for r in 0..prob.targets.rows() {
            for k in 0..c {
                let off = prob.offset.as_ref().map_or(T::zero(), |o| o[(r, k)]);
                params[m * c + k] += (prob.targets[(r, k)] - off) * inv_n;
            }
        }
    }
    let mut pred = vec![T::zero(); smooth.num_predictions()];
    smooth.predict(&params, &mut pred);
    let mut grad = vec![T::zero(); params.len()];
    smooth.gradient(&pred, &mut grad);
    prob.groups
        .iter()
        .zip(&prob.weights)
        .filter(|(_, w)| **w > T::zero())
        .map(|(g, w)| {
            let sq: T = g
                .iter()
                .flat_map(|&j| &grad[j * c..(j + 1) * c])
                .map(|v| *v * *v)
                .sum();
            sq.sqrt() / *w
        })
        .fold(T::zero(), T::max)
}

/// Proximal gradient with restart from `beta_init`; returns the best iterate.
pub fn solve_group_elastic<T: Real>(
    prob: &PolishProblem<T>,
    config: &PolishConfig,
) -> Result<PolishResult<T>> {
    prob.validate()?;
    if !(0.0..=1.0).contains(&config.alpha) || config.lambda.is_nan() || config.lambda < 0.0 {
        return Err(Error::InvalidArgument(
            "alpha must lie in [0, 1] and lambda >= 0".into(),
        ));
    }
    let (m, c) = (prob.hidden(), prob.outputs());
    let smooth = PolishLoss { prob };
    let pen = GroupElastic {
        groups: &prob.groups,
        weights: &prob.weights,
        outputs: c,
        alpha: T::lit(config.alpha),
        lambda: T::lit(config.lambda),
    };
    let n = prob.features.rows();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut pred = vec![T::zero(); n];
    let cols = m + usize::from(prob.fit_intercept);
    let lip = power_iteration(cols, 20, config.seed, |u, w| {
        // Gram of [F 1] for a single output column.
        let mut full = vec![T::zero(); m + 1];
        full[..cols].copy_from_slice(u);
        design_apply(&prob.features, prob.fit_intercept, &full, 1, &mut pred);
        let mut g = vec![T::zero(); m + 1];
        design_adjoint(&prob.features, prob.fit_intercept, &pred, 1, &mut g);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi = *gi * inv_n;
        }
    });
    let step0 = if lip > T::zero() {
        T::one() / lip
    } else {
        T::one()
    };
    let mut x0 = prob.beta_init.as_slice().to_vec();
    x0.extend_from_slice(&prob.intercept_init);
    if !prob.fit_intercept {
        x0[m * c..].iter_mut().for_each(|v| *v = T::zero());
    }
    let opts = ProxOptions {
        accelerated: true,
        max_iters: config.max_iters,
        tol_grad_map: T::lit(config.tol_grad_map),
        tol_rel_obj: T::lit(config.tol_rel_obj),
        stall_window: 50,
        backtrack: T::lit(0.8),
        growth: T::lit(1.25),
        initial_step: step0,
        max_step: step0,
    };
    let res = proximal_gradient(&smooth, &pen, &x0, &opts);
    if !res.objective.is_finite() {
        return Err(Error::Divergence {
            iter: res.iterations,
        });
    }
    Ok(PolishResult {
        beta: DenseMatrix::from_vec_unchecked(m, c, res.params[..m * c].to_vec()),
        intercept: res.params[m * c..].to_vec(),
        objective: res.objective,
        initial_objective: res.initial_objective,
        stop: res.stop,
        trace: res.trace,
    })
}

/// Installs the refitted second layer and removes units whose row norm is at most `threshold`.
pub fn prune_units<T: Real>(
    student: &GReLUStudent<T>,
    beta: &DenseMatrix<T>,
    intercept: &[T],
    threshold: T,
) -> Result<GReLUStudent<T>> {
    if beta.shape() != student.w2.shape() {
        return Err(Error::dims(
            "refitted coefficient rows",
            student.hidden(),
            beta.rows(),
        ));
    }
    if intercept.len() != student.outputs() {
        return Err(Error::dims("intercept", student.outputs(), intercept.len()));
    }
    let mut refit = student.clone();
    refit.w2 = beta.clone();
    refit.output_bias = intercept.to_vec();
    let keep: Vec<usize> = (0..refit.hidden())
        .filter(|&j| norm2(refit.w2.row(j)) > threshold)
        .collect();
    Ok(refit.keep_units(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    /// `new / old`
    pub block_sparsity: f64,
    /// `(total - old + new) / total`
    pub overall_sparsity: f64,
}

pub fn compression_report(
    old_params: u64,
    new_params: u64,
    total_params: u64,
) -> Result<CompressionReport> {
    if old_params == 0 || total_params == 0 {
        return Err(Error::InconsistentCounts(
            "parameter counts must be positive".into(),
        ));
    }
    if old_params > total_params {
        return Err(Error::InconsistentCounts(format!(
            "block has {old_params} parameters but the model only {total_params}"
        )));
    }
    Ok(CompressionReport {
        block_sparsity: new_params as f64 / old_params as f64,
        overall_sparsity: (total_params - old_params + new_params) as f64 / total_params as f64,
    })
}
