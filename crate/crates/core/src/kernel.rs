//! Squared-exponential covariance with per-dimension lengthscales.
//!
//! `k(x, x') = sf^2 exp(-1/2 sum_i (x_i - x'_i)^2 / l_i^2)`
//!
//! Gradients are taken with respect to the log-parameterization
//! `[ln sf, ln l_1, .., ln l_d, ln sn]` so optimizers can work unconstrained.
//! The noise `sn` does not enter the kernel; its slot is kept so every
//! gradient vector lines up with [`LogHyperparams`].

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::{std_dev, Batch};
use crate::error::{check_dim, invalid, Result};

/// Kernel and likelihood hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    sigma_f: f64,
    lengthscales: Vec<f64>,
    sigma_n: f64,
}

impl Hyperparams {
    pub fn new(sigma_f: f64, lengthscales: Vec<f64>, sigma_n: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid("at least one lengthscale is required"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(sigma_f) || !positive(sigma_n) || !lengthscales.iter().all(|&l| positive(l)) {
            return Err(invalid("hyperparameters must be finite and strictly positive"));
        }
        Ok(Self { sigma_f, lengthscales, sigma_n })
    }

    /// Isotropic parameters in `dim` dimensions.
    pub fn isotropic(sigma_f: f64, lengthscale: f64, sigma_n: f64, dim: usize) -> Result<Self> {
        Self::new(sigma_f, alloc::vec![lengthscale; dim], sigma_n)
    }

    /// Scale-aware defaults: `sf = std(y)`, `l_i = std(x_i)`, `sn = 0.1 std(y)`.
    ///
    /// Degenerate (zero or non-finite) spreads fall back to 1.
    pub fn from_data(batch: &Batch) -> Self {
        let guard = |s: f64| if s.is_finite() && s > 1e-12 { s } else { 1.0 };
        let sy = guard(std_dev(batch.y().iter()));
        let lengthscales = batch
            .x()
            .column_iter()
            .map(|c| guard(std_dev(c.iter())))
            .collect();
        Self { sigma_f: sy, lengthscales, sigma_n: 0.1 * sy }
    }

    pub fn sigma_f(&self) -> f64 {
        self.sigma_f
    }

    pub fn signal_variance(&self) -> f64 {
        self.sigma_f * self.sigma_f
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma_n * self.sigma_n
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Number of entries of the log-parameter vector, `d + 2`.
    pub fn n_params(&self) -> usize {
        self.dim() + 2
    }

    pub fn to_log(&self) -> LogHyperparams {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(libm::log(self.sigma_f));
        v.extend(self.lengthscales.iter().map(|&l| libm::log(l)));
        v.push(libm::log(self.sigma_n));
        LogHyperparams(v)
    }

    /// Same parameters with a different noise level.
    pub fn with_sigma_n(&self, sigma_n: f64) -> Result<Self> {
        Self::new(self.sigma_f, self.lengthscales.clone(), sigma_n)
    }
}

/// Elementwise natural log of `(sf, l_1..l_d, sn)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHyperparams(pub Vec<f64>);

impl LogHyperparams {
    pub fn to_hyper(&self) -> Result<Hyperparams> {
        let v = &self.0;
        if v.len() < 3 {
            return Err(invalid("log-hyperparameter vector needs at least 3 entries"));
        }
        let n = v.len();
        Hyperparams::new(
            libm::exp(v[0]),
            v[1..n - 1].iter().map(|&l| libm::exp(l)).collect(),
            libm::exp(v[n - 1]),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
fn scaled_sq_dist(h: &Hyperparams, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    h.lengthscales
        .iter()
        .enumerate()
        .map(|(c, l)| {
            let t = (a[(i, c)] - b[(j, c)]) / l;
            t * t
        })
        .sum()
}

/// `k(x, x')` for two single points.
pub fn k_eval(h: &Hyperparams, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(h.dim(), x.len())?;
    check_dim(h.dim(), x2.len())?;
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&h.lengthscales)
        .map(|((a, b), l)| {
            let t = (a - b) / l;
            t * t
        })
        .sum();
    Ok(h.signal_variance() * libm::exp(-0.5 * r2))
}

/// Cross-covariance `[k(a_i, b_j)]`.
pub fn k_matrix(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(h.dim(), a.ncols())?;
    check_dim(h.dim(), b.ncols())?;
    Ok(cross(h, a, b))
}

/// Unchecked [`k_matrix`]; callers guarantee matching column counts.
pub(crate) fn cross(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let sf2 = h.signal_variance();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        sf2 * libm::exp(-0.5 * scaled_sq_dist(h, a, i, b, j))
    })
}

/// Symmetric `k(a, a)` with an exact diagonal.
pub(crate) fn gram(h: &Hyperparams, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let sf2 = h.signal_variance();
    let mut k = DMatrix::from_element(n, n, sf2);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = sf2 * libm::exp(-0.5 * scaled_sq_dist(h, a, i, a, j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Partial derivatives of `k_matrix(h, a, b)` with respect to each
/// log-hyperparameter, in [`LogHyperparams`] order.
pub fn k_matrix_grad(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let k = k_matrix(h, a, b)?;
    Ok(grad_from(h, &k, a, b))
}

pub(crate) fn grad_from(
    h: &Hyperparams,
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(h.n_params());
    out.push(k * 2.0);
    for (c, l) in h.lengthscales.iter().enumerate() {
        let l2 = l * l;
        out.push(DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
            let diff = a[(i, c)] - b[(j, c)];
            k[(i, j)] * diff * diff / l2
        }));
    }
    out.push(DMatrix::zeros(k.nrows(), k.ncols()));
    out
}

/// Gradient of `k_matrix(h, z, x)` with respect to the entries of `z`.
///
/// Entry `c` of the result is an `m x n` matrix `G_c` with
/// `G_c[r, j] = d k(z_r, x_j) / d z_{r,c}`; each pseudo-input only moves its
/// own row, so this is the full Jacobian in compact form.
pub fn k_cross_grad_z(h: &Hyperparams, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let k = k_matrix(h, z, x)?;
    Ok(cross_grad_from(h, &k, z, x))
}

pub(crate) fn cross_grad_from(
    h: &Hyperparams,
    k: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    h.lengthscales
        .iter()
        .enumerate()
        .map(|(c, l)| {
            let l2 = l * l;
            DMatrix::from_fn(k.nrows(), k.ncols(), |r, j| -k[(r, j)] * (z[(r, c)] - x[(j, c)]) / l2)
        })
        .collect()
}

/// Row `i` of `m` as an owned vector.
pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}
