//! Fixed gate vectors and the hyperplane-arrangement patterns they induce.
//!
//! A gate `g` activates sample `i` when `x_i . g >= 0`; the boundary counts
//! as active everywhere in this crate.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{rng, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

pub const MAX_EXHAUSTIVE_ROWS: usize = 16;
pub const MAX_EXHAUSTIVE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate<T> {
    direction: Vec<T>,
}

impl<T: Real> Gate<T> {
    pub fn new(direction: Vec<T>) -> Result<Self> {
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("gate has a non-finite entry".into()));
        }
        if direction.iter().all(|v| v.is_zero()) {
            return Err(Error::InvalidArgument("gate is the zero vector".into()));
        }
        Ok(Self { direction })
    }

    pub fn direction(&self) -> &[T] {
        &self.direction
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArrangementPattern {
    mask: Vec<bool>,
}

impl ArrangementPattern {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateSource {
    Gaussian,
    DataDerived,
    Exhaustive,
}

/// Gates together with their patterns on the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSet<T> {
    gates: Vec<Gate<T>>,
    patterns: Vec<ArrangementPattern>,
    source: GateSource,
}

impl<T: Real> GateSet<T> {
    /// Computes patterns on `x` and drops gates whose pattern was already
    /// seen (the first witness wins).
    pub fn from_gates(x: &DenseMatrix<T>, gates: Vec<Gate<T>>, source: GateSource) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut patterns = Vec::new();
        for g in gates {
            let p = compute_pattern(x, &g)?;
            if seen.insert(p.clone()) {
                kept.push(g);
                patterns.push(p);
            }
        }
        Ok(Self {
            gates: kept,
            patterns,
            source,
        })
    }

    /// Assembles a gate set without deduplication. Used when reloading a
    /// trained student whose gates are already fixed.
    pub fn from_parts(
        gates: Vec<Gate<T>>,
        patterns: Vec<ArrangementPattern>,
        source: GateSource,
    ) -> Result<Self> {
        if gates.len() != patterns.len() {
            return Err(Error::dims(
                "gate/pattern count",
                gates.len(),
                patterns.len(),
            ));
        }
        Ok(Self {
            gates,
            patterns,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Gate dimension, or 0 for an empty set.
    pub fn dim(&self) -> usize {
        self.gates.first().map_or(0, Gate::dim)
    }

    pub fn gates(&self) -> &[Gate<T>] {
        &self.gates
    }

    pub fn patterns(&self) -> &[ArrangementPattern] {
        &self.patterns
    }

    pub fn source(&self) -> GateSource {
        self.source
    }

    /// Keeps only the listed gates, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            gates: idx.iter().map(|&i| self.gates[i].clone()).collect(),
            patterns: idx.iter().map(|&i| self.patterns[i].clone()).collect(),
            source: self.source,
        }
    }

    /// Fresh patterns of every gate on new inputs, as a `len() x n` flag table.
    pub fn masks_for(&self, x: &DenseMatrix<T>) -> Result<Vec<Vec<bool>>> {
        self.gates
            .iter()
            .map(|g| compute_pattern(x, g).map(|p| p.mask))
            .collect()
    }

    /// Gate directions as a `len() x d` matrix.
    pub fn direction_matrix(&self) -> DenseMatrix<T> {
        let d = self.dim();
        DenseMatrix::from_fn(self.len(), d, |i, j| self.gates[i].direction[j])
    }
}

pub fn compute_pattern<T: Real>(x: &DenseMatrix<T>, g: &Gate<T>) -> Result<ArrangementPattern> {
    if g.dim() != x.cols() {
        return Err(Error::dims("gate dimension", x.cols(), g.dim()));
    }
    Ok(ArrangementPattern {
        mask: (0..x.rows())
            .map(|i| dot(x.row(i), &g.direction) >= T::zero())
            .collect(),
    })
}

/// `ceil((n / d) * ln n)` clamped to `[8, 4096]`.
pub fn default_gate_count(n: usize, d: usize) -> usize {
    let raw = (n as f64 / d.max(1) as f64) * (n.max(1) as f64).ln();
    (raw.ceil() as usize).clamp(8, 4096)
}

/// I.i.d. standard normal gate directions, deduplicated by pattern.
pub fn sample_gaussian_gates<T: Real>(
    x: &DenseMatrix<T>,
    count: Option<usize>,
    seed: u64,
) -> Result<GateSet<T>> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::NoRows);
    }
    let count = count.unwrap_or_else(|| default_gate_count(x.rows(), x.cols()));
    let mut r = rng::seeded(seed);
    let mut gates = Vec::with_capacity(count);
    while gates.len() < count {
        let dir = rng::normal_vec::<T>(&mut r, x.cols(), 1.0);
        if let Ok(g) = Gate::new(dir) {
            gates.push(g);
        }
    }
    GateSet::from_gates(x, gates, GateSource::Gaussian)
}

/// Gates along differences of randomly paired training rows, so each
/// hyperplane separates two observed samples.
pub fn data_derived_gates<T: Real>(
    x: &DenseMatrix<T>,
    count: usize,
    seed: u64,
) -> Result<GateSet<T>> {
    if x.rows() < 2 {
        return Err(Error::NoRows);
    }
    let mut r = rng::seeded(seed);
    let mut gates = Vec::with_capacity(count);
    let mut attempts = 0;
    while gates.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let a = r.random_range(0..x.rows());
        let b = r.random_range(0..x.rows());
        let dir: Vec<T> = x
            .row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| *p - *q)
            .collect();
        if let Ok(g) = Gate::new(dir) {
            gates.push(g);
        }
    }
    GateSet::from_gates(x, gates, GateSource::DataDerived)
}

/// `2 * sum_{k < r} C(n - 1, k)`: the number of regions cut by `n` central
/// hyperplanes in general position in rank `r`.
pub fn pattern_count_bound(n: usize, r: usize) -> u128 {
    let m = n.saturating_sub(1) as u128;
    let mut total = 0u128;
    let mut binom = 1u128; // C(m, 0)
    for k in 0..r as u128 {
        if k > m {
            break;
        }
        total += binom;
        binom = binom * (m - k) / (k + 1);
    }
    2 * total
}

/// Every achievable pattern of `x`, each with a witness gate, sorted
/// lexicographically by mask.
///
/// Works in the row space of `x`. Rank 1 and 2 are swept exactly; rank 3
/// and 4 perturb gates around every ray cut out by `r - 1` rows and then
/// probe at random until `10 * 2^n` consecutive probes add nothing.
pub fn enumerate_arrangements<T: Real>(x: &DenseMatrix<T>, seed: u64) -> Result<GateSet<T>> {
    let (n, d) = x.shape();
    if n > MAX_EXHAUSTIVE_ROWS || d > MAX_EXHAUSTIVE_DIM || n == 0 || d == 0 {
        return Err(Error::GuardViolation {
            n,
            d,
            max_n: MAX_EXHAUSTIVE_ROWS,
            max_d: MAX_EXHAUSTIVE_DIM,
        });
    }
    let xf: Vec<Vec<f64>> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let basis = row_space_basis(&xf);
    let r = basis.len();
    let coords: Vec<Vec<f64>> = xf
        .iter()
        .map(|row| basis.iter().map(|b| dot(row, b)).collect())
        .collect();

    let candidates: Vec<Vec<f64>> = match r {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => angular_sweep(&coords),
        _ => ray_perturbations(&coords, r),
    };

    let lift = |c: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; d];
        for (coef, b) in c.iter().zip(&basis) {
            for (gj, bj) in g.iter_mut().zip(b) {
                *gj += coef * bj;
            }
        }
        g
    };

    let mut found: Vec<(ArrangementPattern, Gate<T>)> = Vec::new();
    let mut seen = HashSet::new();
    let mut offer =
        |dir: Vec<f64>, found: &mut Vec<(ArrangementPattern, Gate<T>)>| -> Result<bool> {
            let Ok(g) = Gate::new(dir.into_iter().map(T::lit).collect()) else {
                return Ok(false);
            };
            let p = compute_pattern(x, &g)?;
            if seen.insert(p.clone()) {
                found.push((p, g));
                return Ok(true);
            }
            Ok(false)
        };

    if r == 0 {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        offer(e, &mut found)?;
    }
    for c in &candidates {
        offer(lift(c), &mut found)?;
    }
    if r >= 3 {
        let patience = 10usize << n;
        let mut rr = rng::seeded(seed);
        let mut quiet = 0;
        while quiet < patience {
            let dir: Vec<f64> = rng::normal_vec(&mut rr, d, 1.0);
            if offer(dir, &mut found)? {
                quiet = 0;
            } else {
                quiet += 1;
            }
        }
    }

    found.sort_by(|a, b| a.0.cmp(&b.0));
    let (patterns, gates) = found.into_iter().unzip();
    GateSet::from_parts(gates, patterns, GateSource::Exhaustive)
}

/// Orthonormal basis of the span of `rows` (modified Gram-Schmidt).
fn row_space_basis(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = rows
        .iter()
        .map(|r| crate::scalar::norm2(r))
        .fold(0.0f64, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in rows {
        let mut v = row.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let nv = crate::scalar::norm2(&v);
        if nv > tol {
            basis.push(v.into_iter().map(|e| e / nv).collect());
        }
    }
    basis
}

/// Witness directions for every open angular cell and every boundary ray
/// of a rank-2 central arrangement, open cells first.
fn angular_sweep(coords: &[Vec<f64>]) -> Vec<Vec<f64>> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let mut angles: Vec<f64> = Vec::new();
    for y in coords {
        if y[0] == 0.0 && y[1] == 0.0 {
            continue;
        }
        let base = y[1].atan2(y[0]);
        for off in [FRAC_PI_2, -FRAC_PI_2] {
            angles.push((base + off).rem_euclid(TAU));
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if angles.is_empty() {
        return vec![vec![1.0, 0.0]];
    }
    let dir = |t: f64| vec![t.cos(), t.sin()];
    let mut out = Vec::with_capacity(2 * angles.len());
    for (k, a) in angles.iter().enumerate() {
        let next = if k + 1 < angles.len() {
            angles[k + 1]
        } else {
            angles[0] + TAU
        };
        out.push(dir(0.5 * (a + next)));
    }
    out.extend(angles.iter().map(|&a| dir(a)));
    out
}

/// Candidate gates near every ray spanned by the common null space of
/// `r - 1` rows: the ray itself (both signs) and one perturbation per sign
/// assignment on the defining rows.
fn ray_perturbations(coords: &[Vec<f64>], r: usize) -> Vec<Vec<f64>> {
    let nonzero: Vec<usize> = (0..coords.len())
        .filter(|&i| coords[i].iter().any(|v| *v != 0.0))
        .collect();
    let mut out = Vec::new();
    for subset in combinations(&nonzero, r - 1) {
        let rows: Vec<Vec<f64>> = subset.iter().map(|&i| coords[i].clone()).collect();
        let Some(u) = null_direction(&rows, r) else {
            continue;
        };
        for sign_u in [1.0, -1.0] {
            let base: Vec<f64> = u.iter().map(|v| v * sign_u).collect();
            out.push(base.clone());
            for mask in 0..(1usize << (r - 1)) {
                let target: Vec<f64> = (0..r - 1)
                    .map(|k| if mask >> k & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                let Some(w) = least_norm_solution(&rows, &target) else {
                    continue;
                };
                // Keep every row off the defining set on the side `base` puts it.
                let mut eps: f64 = 1.0;
                for (i, y) in coords.iter().enumerate() {
                    if subset.contains(&i) {
                        continue;
                    }
                    let along = dot(y, &base).abs();
                    let across = dot(y, &w).abs();
                    if along > 0.0 && across > 0.0 {
                        eps = eps.min(0.5 * along / across);
                    }
                }
                out.push(base.iter().zip(&w).map(|(b, wi)| b + eps * wi).collect());
            }
        }
    }
    out
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// Unit vector orthogonal to `rows` in `R^r`, if the rows have rank `r - 1`.
fn null_direction(rows: &[Vec<f64>], r: usize) -> Option<Vec<f64>> {
    let q = row_space_basis(rows);
    if q.len() != r - 1 {
        return None;
    }
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for axis in 0..r {
        let mut v = vec![0.0; r];
        v[axis] = 1.0;
        for b in &q {
            let c = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let nv = crate::scalar::norm2(&v);
        if nv > best_norm {
            best_norm = nv;
            best = Some(v.into_iter().map(|e| e / nv).collect());
        }
    }
    best
}

/// Minimum-norm `w` with `rows * w = target`, via the Gram system.
fn least_norm_solution(rows: &[Vec<f64>], target: &[f64]) -> Option<Vec<f64>> {
    let k = rows.len();
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| dot(&rows[i], &rows[j])).collect();
            row.push(target[i]);
            row
        })
        .collect();
    for col in 0..k {
        let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        let pivot = a[col].clone();
        for (row, r) in a.iter_mut().enumerate() {
            if row != col {
                let f = r[col] / pivot[col];
                for (x, p) in r[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    let dim = rows[0].len();
    let mut w = vec![0.0; dim];
    for (c, row) in coef.iter().zip(rows) {
        for (wj, rj) in w.iter_mut().zip(row) {
            *wj += c * rj;
        }
    }
    Some(w)
}
