use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::gates::GateSet;
use crate::scalar::{norm2, Real};

/// Blocks with a Euclidean norm below this are treated as exact zeros.
pub const ZERO_BLOCK_NORM: f64 = 1e-10;

/// Convex parameterization: one `d x C` block per gate. Column `k` of block
/// `i` is the group `v_i^k` penalized by its Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSolution<T> {
    pub blocks: Vec<DenseMatrix<T>>,
    pub lambda: T,
    pub gates: GateSet<T>,
}

impl<T: Real> ConvexSolution<T> {
    pub fn zeros(gates: GateSet<T>, outputs: usize, lambda: T) -> Self {
        let d = gates.dim();
        Self {
            blocks: (0..gates.len())
                .map(|_| DenseMatrix::zeros(d, outputs))
                .collect(),
            lambda,
            gates,
        }
    }

    pub fn new(blocks: Vec<DenseMatrix<T>>, lambda: T, gates: GateSet<T>) -> Result<Self> {
        if blocks.len() != gates.len() {
            return Err(Error::dims(
                "solution block count",
                gates.len(),
                blocks.len(),
            ));
        }
        let outputs = blocks.first().map_or(0, DenseMatrix::cols);
        for b in &blocks {
            if b.rows() != gates.dim() {
                return Err(Error::dims("solution block rows", gates.dim(), b.rows()));
            }
            if b.cols() != outputs {
                return Err(Error::dims("solution block cols", outputs, b.cols()));
            }
            if !b.is_finite() {
                return Err(Error::InvalidArgument(
                    "solution has non-finite entries".into(),
                ));
            }
        }
        Ok(Self {
            blocks,
            lambda,
            gates,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.gates.dim()
    }

    pub fn outputs(&self) -> usize {
        self.blocks.first().map_or(0, DenseMatrix::cols)
    }

    pub fn group_norm(&self, gate: usize, class: usize) -> T {
        norm2(&self.blocks[gate].column(class))
    }

    /// Number of `(gate, class)` groups above the zero threshold.
    pub fn nonzero_groups(&self) -> usize {
        let tol = T::lit(ZERO_BLOCK_NORM);
        (0..self.blocks.len())
            .flat_map(|i| (0..self.outputs()).map(move |k| (i, k)))
            .filter(|&(i, k)| self.group_norm(i, k) >= tol)
            .count()
    }

    /// `sum_i diag(1(x g_i >= 0)) x V_i`, accumulated in gate order.
    pub fn forward(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("solution input", self.input_dim(), x.cols()));
        }
        let masks = self.gates.masks_for(x)?;
        let c = self.outputs();
        let mut out = DenseMatrix::zeros(x.rows(), c);
        for (mask, block) in masks.iter().zip(&self.blocks) {
            if mask.iter().all(|m| !m) {
                continue;
            }
            let prod = x.matmul(block)?;
            for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                for (o, p) in out.row_mut(i).iter_mut().zip(prod.row(i)) {
                    *o += *p;
                }
            }
        }
        Ok(out)
    }
}

/// Factored two-layer gated-ReLU network. Hidden unit `j` is gated by
/// `gates[unit_gate[j]]`, reads column `j` of `w1` and writes row `j` of `w2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GReLUStudent<T> {
    pub gates: GateSet<T>,
    pub unit_gate: Vec<usize>,
    /// `d x m`
    pub w1: DenseMatrix<T>,
    /// `m x C`
    pub w2: DenseMatrix<T>,
    pub output_bias: Vec<T>,
}

impl<T: Real> GReLUStudent<T> {
    pub fn new(
        gates: GateSet<T>,
        unit_gate: Vec<usize>,
        w1: DenseMatrix<T>,
        w2: DenseMatrix<T>,
        output_bias: Vec<T>,
    ) -> Result<Self> {
        let m = unit_gate.len();
        if w1.cols() != m {
            return Err(Error::dims("student w1 cols", m, w1.cols()));
        }
        if w2.rows() != m {
            return Err(Error::dims("student w2 rows", m, w2.rows()));
        }
        if !gates.is_empty() && w1.rows() != gates.dim() {
            return Err(Error::dims("student w1 rows", gates.dim(), w1.rows()));
        }
        if output_bias.len() != w2.cols() {
            return Err(Error::dims(
                "student output bias",
                w2.cols(),
                output_bias.len(),
            ));
        }
        if let Some(&g) = unit_gate.iter().find(|&&g| g >= gates.len()) {
            return Err(Error::dims("student unit gate", gates.len(), g));
        }
        Ok(Self {
            gates,
            unit_gate,
            w1,
            w2,
            output_bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.unit_gate.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.cols()
    }

    /// Nonzero entries of `w1` and `w2`.
    pub fn nonzero_params(&self) -> usize {
        let nz = |m: &DenseMatrix<T>| m.as_slice().iter().filter(|v| !v.is_zero()).count();
        nz(&self.w1) + nz(&self.w2)
    }

    /// Gated hidden activations `diag(1(x g_j >= 0)) x W1_j`, `n x m`.
    pub fn hidden_features(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("student input", self.input_dim(), x.cols()));
        }
        let mut h = x.matmul(&self.w1)?;
        if self.hidden() == 0 {
            return Ok(h);
        }
        let masks = self.gates.masks_for(x)?;
        for i in 0..h.rows() {
            for (j, &g) in self.unit_gate.iter().enumerate() {
                if !masks[g][i] {
                    h[(i, j)] = T::zero();
                }
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let h = self.hidden_features(x)?;
        let mut out = h.matmul(&self.w2)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.output_bias) {
                *o += *b;
            }
        }
        Ok(out)
    }

    /// Rescales every unit so that `||W1_j|| = ||W2_j||`; outputs unchanged.
    pub fn rescale_balanced(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.hidden() {
            let col = self.w1.column(j);
            let a = norm2(&col);
            let b = norm2(self.w2.row(j));
            if a.is_zero() || b.is_zero() {
                continue;
            }
            let c = (b / a).sqrt();
            out.w1
                .set_column(j, &col.iter().map(|v| *v * c).collect::<Vec<_>>());
            for v in out.w2.row_mut(j) {
                *v /= c;
            }
        }
        out
    }

    /// Removes hidden units whose `w2` row norm is at most `threshold`.
    pub fn drop_units(&self, threshold: T) -> Self {
        let keep: Vec<usize> = (0..self.hidden())
            .filter(|&j| norm2(self.w2.row(j)) > threshold)
            .collect();
        self.keep_units(&keep)
    }

    pub(crate) fn keep_units(&self, keep: &[usize]) -> Self {
        Self {
            gates: self.gates.clone(),
            unit_gate: keep.iter().map(|&j| self.unit_gate[j]).collect(),
            w1: self.w1.select_columns(keep),
            w2: self.w2.select_rows(keep),
            output_bias: self.output_bias.clone(),
        }
        .compact_gates()
    }

    /// Drops gates no unit refers to.
    pub fn compact_gates(mut self) -> Self {
        let mut used: Vec<usize> = self.unit_gate.clone();
        used.sort_unstable();
        used.dedup();
        if used.len() == self.gates.len() {
            return self;
        }
        let mut remap = vec![usize::MAX; self.gates.len()];
        for (new, &old) in used.iter().enumerate() {
            remap[old] = new;
        }
        self.gates = self.gates.subset(&used);
        for g in &mut self.unit_gate {
            *g = remap[*g];
        }
        self
    }
}

/// Balanced factorization of a convex solution: each group `v_i^k` with
/// `||v|| >= 1e-10` becomes one hidden unit gated by `g_i` with input weights
/// `v / sqrt(||v||)` and a single output weight `sqrt(||v||)` into class `k`.
pub fn recover_weights<T: Real>(solution: &ConvexSolution<T>) -> GReLUStudent<T> {
    let d = solution.input_dim();
    let c = solution.outputs();
    let tol = T::lit(ZERO_BLOCK_NORM);
    let mut unit_gate = Vec::new();
    let mut cols: Vec<Vec<T>> = Vec::new();
    let mut outs: Vec<(usize, T)> = Vec::new();
    for (i, block) in solution.blocks.iter().enumerate() {
        for k in 0..c {
            let v = block.column(k);
            let nv = norm2(&v);
            if nv < tol {
                continue;
            }
            let s = nv.sqrt();
            unit_gate.push(i);
            cols.push(v.iter().map(|e| *e / s).collect());
            outs.push((k, s));
        }
    }
    let m = unit_gate.len();
    let w1 = DenseMatrix::from_fn(d, m, |r, j| cols[j][r]);
    let w2 = DenseMatrix::from_fn(
        m,
        c,
        |j, k| if outs[j].0 == k { outs[j].1 } else { T::zero() },
    );
    GReLUStudent {
        gates: solution.gates.clone(),
        unit_gate,
        w1,
        w2,
        output_bias: vec![T::zero(); c],
    }
    .compact_gates()
}

/// Rescales one unit so `||w1'|| = |w2'|` while keeping `w1 * w2`.
pub fn rescale_balanced<T: Real>(w1_col: &[T], w2_val: T) -> Result<(Vec<T>, T)> {
    let a = norm2(w1_col);
    if a.is_zero() || w2_val.is_zero() {
        return Err(Error::InvalidArgument(
            "rescaling needs nonzero input and output weights".into(),
        ));
    }
    let b = w2_val.abs();
    let s = (b / a).sqrt();
    let col = w1_col.iter().map(|v| *v * s).collect();
    Ok((col, w2_val.signum() * (a * b).sqrt()))
}

/// Stacks per-class scalar-output solutions (same gate set) into one
/// vector-output solution.
pub fn assemble_one_vs_all<T: Real>(per_class: &[ConvexSolution<T>]) -> Result<ConvexSolution<T>> {
    let first = per_class
        .first()
        .ok_or_else(|| Error::InvalidArgument("no per-class solutions".into()))?;
    for s in per_class {
        if s.gates != first.gates {
            return Err(Error::GateSetMismatch);
        }
        if s.outputs() != 1 {
            return Err(Error::dims("per-class outputs", 1, s.outputs()));
        }
    }
    let c = per_class.len();
    let d = first.input_dim();
    let blocks = (0..first.blocks.len())
        .map(|i| DenseMatrix::from_fn(d, c, |r, k| per_class[k].blocks[i][(r, 0)]))
        .collect();
    Ok(ConvexSolution {
        blocks,
        lambda: first.lambda,
        gates: first.gates.clone(),
    })
}
