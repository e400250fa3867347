//! Cholesky factorization of covariance matrices with a jitter ladder.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter ladder: the first retry adds `1e-8 * mean(diag)`, each
/// further retry multiplies by ten, and `1e-4 * mean(diag)` is the last try.
const JITTER_START: f64 = 1e-8;
const JITTER_STOP: f64 = 1e-4;

fn view(m: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn to_dmatrix(m: MatRef<'_, f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, mut dst) in out.column_iter_mut().enumerate() {
        for (d, s) in dst.iter_mut().zip(m.col(j).iter()) {
            *d = *s;
        }
    }
    out
}

/// Cholesky factor `L L^T = A + jitter I` of a symmetric positive definite
/// matrix.
pub struct SpdFactor {
    llt: Llt<f64>,
    jitter: f64,
    n: usize,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("n", &self.n).field("jitter", &self.jitter).finish()
    }
}

impl SpdFactor {
    /// Factorize `a`, adding diagonal jitter only if the plain factorization
    /// fails.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::invalid(format!("expected a square matrix, got {}x{}", n, a.ncols())));
        }
        if let Ok(llt) = view(a).llt(Side::Lower) {
            if (0..n).all(|i| llt.L()[(i, i)].is_finite()) {
                return Ok(SpdFactor { llt, jitter: 0.0, n });
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { feature: None, max_jitter: 0.0 });
        }
        let mean_diag = (a.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
        let mut rel = JITTER_START;
        let mut shifted = a.clone();
        loop {
            let jitter = rel * mean_diag;
            shifted.copy_from(a);
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Ok(llt) = view(&shifted).llt(Side::Lower) {
                return Ok(SpdFactor { llt, jitter, n });
            }
            if rel >= JITTER_STOP * (1.0 - 1e-12) {
                return Err(Error::NotPositiveDefinite { feature: None, max_jitter: jitter });
            }
            rel *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal jitter that was added (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> DMatrix<f64> {
        to_dmatrix(self.llt.L())
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.llt.solve(MatRef::from_column_major_slice(b.as_slice(), b.len(), 1));
        DVector::from_fn(b.len(), |i, _| x[(i, 0)])
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        to_dmatrix(self.llt.solve(view(b)).as_ref())
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = faer::Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            x.as_mut(),
            faer::Par::Seq,
        );
        to_dmatrix(x.as_ref())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        to_dmatrix(self.llt.inverse().as_ref())
    }
}
