use serde::Serialize;

use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::gates::ArrangementPattern;
use crate::scalar::Real;

/// Slack allowed in `(2 D_i - I) X v_i >= 0`.
pub const CONE_TOLERANCE: f64 = 1e-9;

/// Candidate blocks `v_i`, `u_i` paired with their patterns `D_i`.
#[derive(Debug, Clone)]
pub struct ConeProgram<T> {
    pub patterns: Vec<ArrangementPattern>,
    pub v: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    V,
    U,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeReport {
    /// Per pattern, whether both `v_i` and `u_i` lie in the cone.
    pub feasible: Vec<bool>,
    pub violating: Vec<(usize, BlockKind)>,
    pub max_violation: f64,
}

impl ConeReport {
    pub fn all_feasible(&self) -> bool {
        self.violating.is_empty()
    }
}

fn violation<T: Real>(x: &DenseMatrix<T>, mask: &[bool], w: &[T]) -> f64 {
    let mut worst = 0.0f64;
    for (j, &on) in mask.iter().enumerate() {
        let s = crate::scalar::dot(x.row(j), w).as_f64();
        let signed = if on { s } else { -s };
        worst = worst.max(-signed);
    }
    worst
}

pub fn cone_feasibility<T: Real>(prog: &ConeProgram<T>, x: &DenseMatrix<T>) -> Result<ConeReport> {
    let p = prog.patterns.len();
    if prog.v.len() != p || prog.u.len() != p {
        return Err(Error::InconsistentCounts(format!(
            "{p} patterns, {} v blocks, {} u blocks",
            prog.v.len(),
            prog.u.len()
        )));
    }
    let mut report = ConeReport {
        feasible: Vec::with_capacity(p),
        violating: Vec::new(),
        max_violation: 0.0,
    };
    for (i, pat) in prog.patterns.iter().enumerate() {
        if pat.len() != x.rows() {
            return Err(Error::dims("pattern length", x.rows(), pat.len()));
        }
        let mut ok = true;
        for (kind, w) in [(BlockKind::V, &prog.v[i]), (BlockKind::U, &prog.u[i])] {
            if w.len() != x.cols() {
                return Err(Error::dims("cone block length", x.cols(), w.len()));
            }
            let viol = violation(x, pat.mask(), w);
            report.max_violation = report.max_violation.max(viol);
            if viol > CONE_TOLERANCE {
                ok = false;
                report.violating.push((i, kind));
            }
        }
        report.feasible.push(ok);
    }
    Ok(report)
}
