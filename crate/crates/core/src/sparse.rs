//! Batch variational sparse GP: free-energy bound, its optimization, the
//! optimal pseudo-output moments and the resulting predictive.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bound::{evaluate, pack, unpack, BoundEval, InducingPosterior, OldSite};
use crate::data::Batch;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::{cross, gram, row, Hyperparams};
use crate::linalg::{symmetrize, Factor, JitterPolicy};
use crate::metric::FiniteGaussian;
use crate::optimize::{minimize, OptimizeConfig};

/// A sparse GP summarized by `q(f_Z) = N(mu_Z, S_Z)`.
///
/// Besides the moments it keeps the site parameters `(G, h)` with
/// `S_Z = B (B + G)^-1 B` and `mu_Z = B (B + G)^-1 h`, where `B` is the
/// (jittered) prior covariance at `Z`. The site form is what a streaming
/// update consumes.
#[derive(Debug, Clone)]
pub struct SparseGP {
    hyper: Hyperparams,
    z: DMatrix<f64>,
    mu_z: DVector<f64>,
    s_z: DMatrix<f64>,
    kzz: Factor,
    inner: Factor,
    alpha: DVector<f64>,
    site_precision: DMatrix<f64>,
    site_shift: DVector<f64>,
    n_seen: usize,
    was_streamed: bool,
}

impl SparseGP {
    pub(crate) fn from_posterior(
        hyper: Hyperparams,
        z: DMatrix<f64>,
        post: InducingPosterior,
        n_seen: usize,
        was_streamed: bool,
    ) -> Self {
        let InducingPosterior { kzz, inner, alpha, site_precision, site_shift } = post;
        let mut b = gram(&hyper, &z);
        for i in 0..b.nrows() {
            b[(i, i)] += kzz.jitter();
        }
        let mu_z = &b * &alpha;
        let mut s_z = &b * inner.solve(&b);
        symmetrize(&mut s_z);
        Self { hyper, z, mu_z, s_z, kzz, inner, alpha, site_precision, site_shift, n_seen, was_streamed }
    }

    /// Rebuild a model from stored site parameters.
    pub fn from_site(
        hyper: Hyperparams,
        z: DMatrix<f64>,
        site_precision: DMatrix<f64>,
        site_shift: DVector<f64>,
        n_seen: usize,
        was_streamed: bool,
    ) -> Result<Self> {
        let m = z.nrows();
        if m == 0 {
            return Err(invalid("a sparse GP needs at least one pseudo-input"));
        }
        check_dim(hyper.dim(), z.ncols())?;
        check_dim(m, site_precision.nrows())?;
        check_dim(m, site_precision.ncols())?;
        check_dim(m, site_shift.len())?;
        let kzz_raw = gram(&hyper, &z);
        let kzz = Factor::new(&kzz_raw, hyper.signal_variance(), JitterPolicy::Kernel)?;
        let mut c = kzz_raw;
        for i in 0..m {
            c[(i, i)] += kzz.jitter();
        }
        c += &site_precision;
        let inner = Factor::exact(&c)?;
        let alpha = inner.solve_vec(&site_shift);
        let post = InducingPosterior { kzz, inner, alpha, site_precision, site_shift };
        Ok(Self::from_posterior(hyper, z, post, n_seen, was_streamed))
    }

    /// Build a model from explicit moments `N(mu, s)` at `z`.
    pub fn from_moments(hyper: Hyperparams, z: DMatrix<f64>, mu: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        let m = z.nrows();
        check_dim(hyper.dim(), z.ncols())?;
        check_dim(m, mu.len())?;
        check_dim(m, s.nrows())?;
        let kzz_raw = gram(&hyper, &z);
        let kzz = Factor::new(&kzz_raw, hyper.signal_variance(), JitterPolicy::Kernel)?;
        let mut b = kzz_raw;
        for i in 0..m {
            b[(i, i)] += kzz.jitter();
        }
        let sfac = Factor::new(&s, hyper.signal_variance(), JitterPolicy::OnFailure)?;
        // C = B S^-1 B,  site = C - B,  h = B S^-1 mu
        let sinv_b = sfac.solve(&b);
        let mut c = &b * &sinv_b;
        symmetrize(&mut c);
        let site_precision = &c - &b;
        let site_shift = sinv_b.tr_mul(&mu);
        Self::from_site(hyper, z, site_precision, site_shift, 0, false)
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn mu_z(&self) -> &DVector<f64> {
        &self.mu_z
    }

    pub fn s_z(&self) -> &DMatrix<f64> {
        &self.s_z
    }

    pub fn kzz_factor(&self) -> &Factor {
        &self.kzz
    }

    pub fn site_precision(&self) -> &DMatrix<f64> {
        &self.site_precision
    }

    pub fn site_shift(&self) -> &DVector<f64> {
        &self.site_shift
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn was_streamed(&self) -> bool {
        self.was_streamed
    }

    pub fn n_pseudo(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Arithmetic mean of the pseudo-inputs.
    pub fn center(&self) -> DVector<f64> {
        crate::data::row_mean(&self.z)
    }

    /// Predictive mean and full covariance at `xs`.
    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        predict_sparse(self, xs)
    }

    /// Predictive mean and marginal variances at `xs`.
    pub fn predict_marginal(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim(self.dim(), xs.ncols())?;
        let kzs = cross(&self.hyper, &self.z, xs);
        let mean = kzs.tr_mul(&self.alpha);
        let a = self.kzz.half_solve(&kzs);
        let c = self.inner.half_solve(&kzs);
        let sf2 = self.hyper.signal_variance();
        let var = DVector::from_iterator(
            xs.nrows(),
            (0..xs.nrows()).map(|j| {
                let v = sf2 - a.column(j).norm_squared() + c.column(j).norm_squared();
                v.max(0.0)
            }),
        );
        Ok((mean, var))
    }

    /// Predictive at a single point.
    pub fn predict_point(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let xs = DMatrix::from_row_slice(1, x.len(), x);
        let (m, v) = self.predict_marginal(&xs)?;
        Ok((m[0], v[0]))
    }

    /// The pseudo-point summary in the form a streaming update consumes:
    /// precision `B^-1 G B^-1`, shift `B^-1 h`, and the constant
    /// `1/2 ln|C| - 1/2 ln|B| - 1/2 h'C^-1 h`.
    pub(crate) fn old_site(&self) -> OldSite {
        let bp = self.kzz.solve(&self.site_precision);
        let mut precision = self.kzz.solve(&bp.transpose());
        symmetrize(&mut precision);
        let shift = self.kzz.solve_vec(&self.site_shift);
        let constant =
            0.5 * self.inner.log_det() - 0.5 * self.kzz.log_det() - 0.5 * self.site_shift.dot(&self.alpha);
        OldSite { z: self.z.clone(), precision, shift, constant }
    }

    /// Pseudo-input `i`.
    pub fn pseudo_input(&self, i: usize) -> DVector<f64> {
        row(&self.z, i)
    }
}

/// Free-energy bound and its gradient over log-hyperparameters then `Z`
/// (row-major).
pub fn vfe_objective(h: &Hyperparams, z: &DMatrix<f64>, data: &Batch) -> Result<(f64, DVector<f64>)> {
    let BoundEval { value, grad, .. } = evaluate(h, z, data, None, true)?;
    Ok((value, grad.expect("gradient requested")))
}

/// Bound value only.
pub fn vfe_value(h: &Hyperparams, z: &DMatrix<f64>, data: &Batch) -> Result<f64> {
    Ok(evaluate(h, z, data, None, false)?.value)
}

/// Optimal `q(f_Z)` for fixed `(h, Z)`.
pub fn compute_variational_moments(
    h: &Hyperparams,
    z: &DMatrix<f64>,
    data: &Batch,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gp = condition(h, z, data)?;
    Ok((gp.mu_z, gp.s_z))
}

/// The sparse GP with optimal moments at fixed `(h, Z)`, without optimizing.
pub fn condition(h: &Hyperparams, z: &DMatrix<f64>, data: &Batch) -> Result<SparseGP> {
    if z.nrows() == 0 {
        return Err(invalid("a sparse GP needs at least one pseudo-input"));
    }
    let eval = evaluate(h, z, data, None, false)?;
    Ok(SparseGP::from_posterior(h.clone(), z.clone(), eval.posterior, data.len(), false))
}

/// Indices of the first occurrence of each distinct row.
pub(crate) fn distinct_rows(x: &DMatrix<f64>) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in 0..x.nrows() {
        if !keep.iter().any(|&j| x.row(i) == x.row(j)) {
            keep.push(i);
        }
    }
    keep
}

/// Seeded subset (without replacement, in ascending order) of `pool`.
pub(crate) fn sample_subset(pool: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

pub(crate) fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, c| x[(rows[i], c)])
}

/// Fit a sparse GP to `data` with at most `m` pseudo-inputs.
///
/// The pseudo-inputs start at a seeded random subset of the distinct inputs
/// and are optimized jointly with the hyperparameters.
pub fn fit_vfe(data: &Batch, m: usize, init: &Hyperparams, cfg: &OptimizeConfig, seed: u64) -> Result<SparseGP> {
    if data.is_empty() {
        return Err(invalid("cannot fit a sparse GP to an empty batch"));
    }
    if m == 0 {
        return Err(invalid("pseudo-point budget must be positive"));
    }
    check_dim(init.dim(), data.dim())?;
    let pool = distinct_rows(data.x());
    let rows = sample_subset(&pool, m, seed);
    let z0 = select_rows(data.x(), &rows);
    fit_from(data, init, z0, cfg)
}

/// Optimize `(h, Z)` from the given starting point.
pub fn fit_from(data: &Batch, init: &Hyperparams, z0: DMatrix<f64>, cfg: &OptimizeConfig) -> Result<SparseGP> {
    let (m, d) = z0.shape();
    let x0 = pack(init, &z0);
    let objective = |v: &DVector<f64>| {
        let (h, z) = unpack(v, d, m).ok()?;
        let e = evaluate(&h, &z, data, None, true).ok()?;
        Some((-e.value, -e.grad?))
    };
    let res = minimize(objective, x0, cfg).map_err(|_| Error::Numerical("bound is not finite at initialization".into()))?;
    if res.diverged {
        return Err(Error::Diverged { best_value: -res.value, best_params: res.argmin.as_slice().to_vec() });
    }
    let (h, z) = unpack(&res.argmin, d, m)?;
    let eval = evaluate(&h, &z, data, None, false)?;
    Ok(SparseGP::from_posterior(h, z, eval.posterior, data.len(), false))
}

/// Predictive distribution of a sparse (batch or streamed) model.
pub fn predict_sparse(gp: &SparseGP, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(gp.dim(), xs.ncols())?;
    let kzs = cross(&gp.hyper, &gp.z, xs);
    let mean = kzs.tr_mul(&gp.alpha);
    let a = gp.kzz.half_solve(&kzs);
    let c = gp.inner.half_solve(&kzs);
    let mut cov = gram(&gp.hyper, xs) - a.tr_mul(&a) + c.tr_mul(&c);
    symmetrize(&mut cov);
    for i in 0..cov.nrows() {
        if cov[(i, i)] < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    Ok((mean, cov))
}

/// The predictive at `xs` as a finite-dimensional Gaussian.
pub fn posterior_at(gp: &SparseGP, xs: &DMatrix<f64>) -> Result<FiniteGaussian> {
    let (mean, cov) = predict_sparse(gp, xs)?;
    FiniteGaussian::new(mean, cov)
}
