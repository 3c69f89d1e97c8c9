//! Closed-form squared 2-Wasserstein (Bures) distance between Gaussians and
//! the two model-similarity scores built on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::sparse::{posterior_at, SparseGP};

/// Relative asymmetry accepted (and removed) on construction.
const ASYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues above `-NEG_EIG_TOL * trace` are clamped to zero.
const NEG_EIG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl FiniteGaussian {
    /// Symmetrizes `cov` and checks it is positive semidefinite up to
    /// `-1e-8 * trace`.
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        check_dim(n, cov.nrows())?;
        check_dim(n, cov.ncols())?;
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("Gaussian has non-finite moments".into()));
        }
        let scale = cov.amax();
        let asym = (&cov - cov.transpose()).amax();
        if asym > ASYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        symmetrize(&mut cov);
        if n > 0 {
            let eig = eigenvalues(&cov)?;
            let floor = -NEG_EIG_TOL * cov.trace().abs();
            if eig.iter().any(|&e| e < floor) {
                return Err(Error::Numerical("covariance has a significantly negative eigenvalue".into()));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn eigen(s: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))
}

fn eigenvalues(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(eigen(s)?.eigenvalues)
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-8 trace, 0)` are treated as zero; anything more
/// negative is an error.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(s.nrows(), s.ncols())?;
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let e = eigen(&sym)?;
    let floor = -NEG_EIG_TOL * sym.trace().abs();
    if e.eigenvalues.iter().any(|&v| v < floor) {
        return Err(Error::Numerical("matrix is not positive semidefinite".into()));
    }
    let roots = e.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    let q = &e.eigenvectors;
    let mut r = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut r);
    Ok(r)
}

/// `|m_p - m_q|^2 + tr(S_p + S_q - 2 (S_p^1/2 S_q S_p^1/2)^1/2)`, clamped at 0.
pub fn w2_squared(p: &FiniteGaussian, q: &FiniteGaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    if p.dim() == 0 || p == q {
        return Ok(0.0);
    }
    let mean_term = (&p.mean - &q.mean).norm_squared();
    let rp = psd_sqrt(&p.cov)?;
    let mut inner = &rp * &q.cov * &rp;
    symmetrize(&mut inner);
    let cross: f64 = eigenvalues(&inner)?.iter().map(|&v| libm::sqrt(v.max(0.0))).sum();
    let value = mean_term + p.cov.trace() + q.cov.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Change of a model's posterior at its own (pre-update) pseudo-inputs.
pub fn similarity_old(before: &SparseGP, after: &SparseGP) -> Result<f64> {
    let z = before.z();
    w2_squared(&posterior_at(before, z)?, &posterior_at(after, z)?)
}

/// Disagreement between a fresh model and an updated model at the new inputs.
pub fn similarity_new(fresh: &SparseGP, after: &SparseGP, x_new: &DMatrix<f64>) -> Result<f64> {
    w2_squared(&posterior_at(fresh, x_new)?, &posterior_at(after, x_new)?)
}

/// Total similarity; `+inf` (an unstable update) propagates.
pub fn similarity_total(w_old: f64, w_new: f64) -> f64 {
    if w_old.is_nan() || w_new.is_nan() {
        return f64::INFINITY;
    }
    w_old + w_new
}
