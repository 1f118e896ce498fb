//! Squared loss of the gated problem through its precomputed Gram matrix.
//!
//! With the gated design `A` (columns ordered `(r, i)` so that the parameter
//! layout is a row-major `dG x C` matrix `P`), the loss is
//! `1/2 <P, H P> - <P, B> + c0` with `H = A^T A / n`, `B = A^T Y / n` and
//! `c0 = ||Y||^2 / (2n)`. The cached "prediction" is `[H P, P]`, which is
//! linear in `P`, so the proximal engine extrapolates it like any other.

use super::engine::{power_iteration, LinearSmooth};
use super::problem::GatedDesign;
use crate::data::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

/// Gram matrices above this many entries are not built.
pub const MAX_GRAM_ENTRIES: usize = 1 << 25;

const ROW_CHUNK_ELEMS: usize = 1 << 22;

pub struct GramLoss<T> {
    /// `dG x dG`
    h: Vec<T>,
    /// `dG x C`
    b: Vec<T>,
    c0: T,
    width: usize,
    outputs: usize,
}

impl<T: Real> GramLoss<T> {
    /// `None` when the Gram matrix would exceed [`MAX_GRAM_ENTRIES`].
    pub fn new(design: &GatedDesign<T>, y: &DenseMatrix<T>) -> Result<Option<Self>> {
        let (n, d, g) = (design.samples(), design.dim(), design.gates());
        if y.rows() != n {
            return Err(Error::dims("target rows", n, y.rows()));
        }
        let width = d * g;
        if width.saturating_mul(width) > MAX_GRAM_ENTRIES {
            return Ok(None);
        }
        let c = y.cols();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut h = vec![T::zero(); width * width];
        let mut b = vec![T::zero(); width * c];
        let rows = (ROW_CHUNK_ELEMS / width.max(1)).clamp(1, n.max(1));
        let mut a = vec![T::zero(); rows * width];
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + rows).min(n);
            let m = j1 - j0;
            design.fill_rows(j0, j1, &mut a[..m * width]);
            T::gemm(
                width,
                m,
                width,
                inv_n,
                &a,
                1,
                width as isize,
                &a,
                width as isize,
                1,
                T::one(),
                &mut h,
                width as isize,
                1,
            );
            T::gemm(
                width,
                m,
                c,
                inv_n,
                &a,
                1,
                width as isize,
                &y.as_slice()[j0 * c..],
                c as isize,
                1,
                T::one(),
                &mut b,
                c as isize,
                1,
            );
            j0 = j1;
        }
        let c0 = dot(y.as_slice(), y.as_slice()) * inv_n * T::lit(0.5);
        Ok(Some(Self {
            h,
            b,
            c0,
            width,
            outputs: c,
        }))
    }

    /// Largest eigenvalue of `H`.
    pub fn lipschitz(&self, iters: usize, seed: u64) -> T {
        let w = self.width;
        power_iteration(w, iters, seed, |u, out| {
            T::gemm(
                w,
                w,
                1,
                T::one(),
                &self.h,
                w as isize,
                1,
                u,
                1,
                1,
                T::zero(),
                out,
                1,
                1,
            );
        })
    }

    fn split<'p>(&self, pred: &'p [T]) -> (&'p [T], &'p [T]) {
        pred.split_at(self.width * self.outputs)
    }
}

impl<T: Real> LinearSmooth<T> for GramLoss<T> {
    fn num_params(&self) -> usize {
        self.width * self.outputs
    }

    fn num_predictions(&self) -> usize {
        2 * self.width * self.outputs
    }

    fn predict(&self, params: &[T], out: &mut [T]) {
        let (w, c) = (self.width, self.outputs);
        let (hp, p) = out.split_at_mut(w * c);
        T::gemm(
            w,
            w,
            c,
            T::one(),
            &self.h,
            w as isize,
            1,
            params,
            c as isize,
            1,
            T::zero(),
            hp,
            c as isize,
            1,
        );
        p.copy_from_slice(params);
    }

    fn loss(&self, pred: &[T]) -> T {
        let (hp, p) = self.split(pred);
        let quad = dot(p, hp) * T::lit(0.5);
        let lin = dot(p, &self.b);
        (quad - lin + self.c0).max(T::zero())
    }

    fn gradient(&self, pred: &[T], grad: &mut [T]) {
        let (hp, _) = self.split(pred);
        for ((g, a), b) in grad.iter_mut().zip(hp).zip(&self.b) {
            *g = *a - *b;
        }
    }

    fn bregman_gap(&self, pred_y: &[T], pred_z: &[T], _f_y: T, _f_z: T, _linear: T) -> T {
        let (hy, py) = self.split(pred_y);
        let (hz, pz) = self.split(pred_z);
        let mut acc = T::zero();
        for i in 0..hy.len() {
            acc += (pz[i] - py[i]) * (hz[i] - hy[i]);
        }
        (acc * T::lit(0.5)).max(T::zero())
    }
}
