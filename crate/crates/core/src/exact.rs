//! Exact zero-mean GP regression. Cubic in the number of points; used as the
//! reference for the sparse approximations.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::Batch;
use crate::error::{check_dim, invalid, Result};
use crate::kernel::{cross, gram, Hyperparams};
use crate::linalg::{add_diag, symmetrize, Factor, JitterPolicy};

#[derive(Debug, Clone)]
pub struct ExactGP {
    hyper: Hyperparams,
    x: DMatrix<f64>,
    y: DVector<f64>,
    chol: Factor,
    alpha: DVector<f64>,
}

/// Factorize `k(X, X) + sn^2 I` and solve it against `y`.
pub fn fit_exact(h: &Hyperparams, data: &Batch) -> Result<ExactGP> {
    if data.is_empty() {
        return Err(invalid("exact GP needs at least one observation"));
    }
    check_dim(h.dim(), data.dim())?;
    let mut k = gram(h, data.x());
    add_diag(&mut k, h.noise_variance());
    let chol = Factor::new(&k, h.signal_variance(), JitterPolicy::OnFailure)?;
    let alpha = chol.solve_vec(data.y());
    Ok(ExactGP { hyper: h.clone(), x: data.x().clone(), y: data.y().clone(), chol, alpha })
}

impl ExactGP {
    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn factor(&self) -> &Factor {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        predict_exact(self, xs)
    }

    pub fn log_marginal(&self) -> f64 {
        let n = self.y.len() as f64;
        -0.5 * self.y.dot(&self.alpha) - 0.5 * self.chol.log_det() - 0.5 * n * libm::log(2.0 * PI)
    }
}

/// Posterior mean and covariance at `xs`.
pub fn predict_exact(gp: &ExactGP, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(gp.hyper.dim(), xs.ncols())?;
    let ksx = cross(&gp.hyper, xs, &gp.x);
    let mean = &ksx * &gp.alpha;
    let v = gp.chol.half_solve(&ksx.transpose());
    let mut cov = gram(&gp.hyper, xs) - v.transpose() * v;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// `log N(y; 0, K + sn^2 I)`.
pub fn log_marginal(h: &Hyperparams, data: &Batch) -> Result<f64> {
    Ok(fit_exact(h, data)?.log_marginal())
}
