//! Cholesky factorization with a bounded jitter ladder, plus a few dense helpers.

use alloc::format;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First rung of the jitter ladder, relative to the signal variance.
pub const BASE_JITTER: f64 = 1e-6;
/// Last rung of the jitter ladder, relative to the signal variance.
pub const MAX_JITTER: f64 = 1e-2;

/// When to add diagonal jitter before factorizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterPolicy {
    /// Kernel Gram matrices. The plain factor is kept only if every pivot is
    /// at least `BASE_JITTER * scale`; otherwise the ladder starts at the base.
    Kernel,
    /// Matrices with their own regularizer (e.g. `K + sn^2 I`): jitter is
    /// added only if the plain factorization fails.
    OnFailure,
}

/// A lower Cholesky factor together with the diagonal shift that was used.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorize `m + jitter I` following `policy`; `scale` is the reference
    /// magnitude (usually the signal variance) for the relative jitter.
    pub fn new(m: &DMatrix<f64>, scale: f64, policy: JitterPolicy) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        let floor = BASE_JITTER * scale;
        if let Some(chol) = Cholesky::new(m.clone()) {
            let ok = match policy {
                JitterPolicy::OnFailure => true,
                JitterPolicy::Kernel => chol.l_dirty().diagonal().iter().all(|d| d * d >= floor),
            };
            if ok {
                return Ok(Self { chol, jitter: 0.0 });
            }
        }
        let mut jitter = floor;
        while jitter <= MAX_JITTER * scale * (1.0 + 1e-9) {
            let mut shifted = m.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(Self { chol, jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "{0}x{0} matrix is not positive definite even with jitter {1:e}",
            m.nrows(),
            MAX_JITTER * scale
        )))
    }

    /// Plain factorization with no jitter; fails if `m` is not positive definite.
    pub fn exact(m: &DMatrix<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        Cholesky::new(m.clone())
            .map(|chol| Self { chol, jitter: 0.0 })
            .ok_or_else(|| Error::Numerical(format!("{0}x{0} matrix is not positive definite", m.nrows())))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(L L^T)^{-1} b`
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b`
    pub fn half_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>()
    }
}

/// Sum of elementwise products, `tr(a^T b)`.
pub(crate) fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn add_diag(m: &mut DMatrix<f64>, v: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += v;
    }
}

/// Normwise relative difference `|a - b|_F / max(|b|_F, tiny)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
