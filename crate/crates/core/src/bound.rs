//! Collapsed variational bound shared by the batch and streaming fits.
//!
//! Both bounds are evaluated in one form. With pseudo-inputs `Z` (prior
//! covariance `B = k(Z, Z) + jitter`), data `(X, y)` with precision
//! `beta = sn^-2`, and optionally an old pseudo-point summary at `Za` acting
//! as a Gaussian pseudo-observation with precision `P` and shift `g`:
//!
//! ```text
//! U = k(X, Z)        V = k(Za, Z)       W = k(Za, Za)
//! G = beta U'U + V'PV                    h = beta U'y + V'g
//! C = B + G                              alpha = C^-1 h
//! F = -N/2 ln 2pi + N/2 ln beta - beta/2 y'y - 1/2 ln|C| + 1/2 ln|B|
//!     + 1/2 h'alpha - beta/2 tr k(X, X) + 1/2 tr(B^-1 G) - 1/2 tr(P W) + c_old
//! ```
//!
//! Without the old block this is the batch free energy. With the old block
//! and `c_old` it is the online bound where `q_old(a) / p_old(a)` enters as a
//! pseudo-likelihood on `f(Za)`. Writing the old block through its precision
//! keeps the fresh-prior limit (`P = 0`) finite.
//!
//! The optimal `q(f_Z)` is `N(B alpha, B C^-1 B)`; `(G, h)` are returned as
//! the site parameters of the updated model so it can later act as an old
//! summary itself.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::Batch;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{cross, cross_grad_from, gram, grad_from, Hyperparams, LogHyperparams};
use crate::linalg::{frob, Factor, JitterPolicy};

/// A previous model's pseudo-point summary, expressed on `f(Za)`.
#[derive(Debug, Clone)]
pub(crate) struct OldSite {
    pub z: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub constant: f64,
}

/// Posterior over the pseudo-outputs at the evaluated point.
#[derive(Debug, Clone)]
pub(crate) struct InducingPosterior {
    pub kzz: Factor,
    pub inner: Factor,
    pub alpha: DVector<f64>,
    pub site_precision: DMatrix<f64>,
    pub site_shift: DVector<f64>,
}

pub(crate) struct BoundEval {
    pub value: f64,
    /// Layout: log-hyperparameters, then `Z` row-major.
    pub grad: Option<DVector<f64>>,
    pub posterior: InducingPosterior,
}

/// Pack `(hyper, Z)` into one optimizer vector.
pub(crate) fn pack(h: &Hyperparams, z: &DMatrix<f64>) -> DVector<f64> {
    let lh = h.to_log();
    let (m, d) = z.shape();
    let mut v = DVector::zeros(lh.0.len() + m * d);
    for (i, p) in lh.0.iter().enumerate() {
        v[i] = *p;
    }
    let off = lh.0.len();
    for r in 0..m {
        for c in 0..d {
            v[off + r * d + c] = z[(r, c)];
        }
    }
    v
}

pub(crate) fn unpack(v: &DVector<f64>, dim: usize, m: usize) -> Result<(Hyperparams, DMatrix<f64>)> {
    let np = dim + 2;
    check_dim(np + m * dim, v.len())?;
    let h = LogHyperparams(v.as_slice()[..np].to_vec()).to_hyper()?;
    let z = DMatrix::from_row_slice(m, dim, &v.as_slice()[np..]);
    Ok((h, z))
}

pub(crate) fn evaluate(
    h: &Hyperparams,
    z: &DMatrix<f64>,
    data: &Batch,
    old: Option<&OldSite>,
    want_grad: bool,
) -> Result<BoundEval> {
    let d = h.dim();
    check_dim(d, z.ncols())?;
    check_dim(d, data.dim())?;
    if let Some(o) = old {
        check_dim(d, o.z.ncols())?;
    }
    let m = z.nrows();
    let n = data.len();
    let x = data.x();
    let y = data.y();
    let sf2 = h.signal_variance();
    let beta = 1.0 / h.noise_variance();

    let kzz = gram(h, z);
    let bfac = Factor::new(&kzz, sf2, JitterPolicy::Kernel)?;
    let u = cross(h, x, z);
    let mut g = u.tr_mul(&u) * beta;
    let mut hv = u.tr_mul(y) * beta;

    let old_terms = old.map(|o| {
        let v = cross(h, &o.z, z);
        let pv = &o.precision * &v;
        (v, pv)
    });
    if let (Some(o), Some((v, pv))) = (old, old_terms.as_ref()) {
        g += v.tr_mul(pv);
        hv += v.tr_mul(&o.shift);
    }

    let mut c = kzz.clone();
    for i in 0..m {
        c[(i, i)] += bfac.jitter();
    }
    let bmat = c.clone();
    c += &g;
    let cfac = Factor::exact(&c).map_err(|_| Error::Numerical("inner bound matrix is not positive definite".into()))?;
    let alpha = cfac.solve_vec(&hv);

    let binv_g = bfac.solve(&g);
    let mut value = -0.5 * n as f64 * libm::log(2.0 * PI) + 0.5 * n as f64 * libm::log(beta)
        - 0.5 * beta * y.norm_squared()
        - 0.5 * cfac.log_det()
        + 0.5 * bfac.log_det()
        + 0.5 * hv.dot(&alpha)
        - 0.5 * beta * n as f64 * sf2
        + 0.5 * binv_g.trace();
    let mut w = None;
    if let Some(o) = old {
        let wm = gram(h, &o.z);
        value += -0.5 * frob(&o.precision, &wm) + o.constant;
        w = Some(wm);
    }
    if !value.is_finite() {
        return Err(Error::Numerical("bound evaluated to a non-finite value".into()));
    }

    let grad = if want_grad {
        let binv = bfac.inverse();
        let cinv = cfac.inverse();
        let diff = &binv - &cinv;
        let bbar = (&diff - &alpha * alpha.transpose() - &binv_g * &binv) * 0.5;
        let ua = &u * &alpha;
        let resid = y - &ua;
        let ubar = (&u * &diff + &resid * alpha.transpose()) * beta;
        let utu = u.tr_mul(&u);
        let betabar = 0.5 * n as f64 / beta - 0.5 * y.norm_squared() - 0.5 * frob(&cinv, &utu)
            + ua.dot(y)
            - 0.5 * ua.norm_squared()
            - 0.5 * n as f64 * sf2
            + 0.5 * frob(&binv, &utu);

        let np = h.n_params();
        let mut grad = DVector::zeros(np + m * d);

        let dk_zz = grad_from(h, &kzz, z, z);
        let dk_xz = grad_from(h, &u, x, z);
        // sf: every kernel block scales with sf^2, and so does the jitter.
        grad[0] = 2.0 * frob(&bbar, &bmat) + 2.0 * frob(&ubar, &u) - beta * n as f64 * sf2;
        for p in 1..=d {
            grad[p] = frob(&bbar, &dk_zz[p]) + frob(&ubar, &dk_xz[p]);
        }
        grad[np - 1] = -2.0 * beta * betabar;

        let gz_zz = cross_grad_from(h, &kzz, z, z);
        let kzx = u.transpose();
        let gz_zx = cross_grad_from(h, &kzx, z, x);
        for r in 0..m {
            for cidx in 0..d {
                let mut s = 0.0;
                for j in 0..m {
                    s += 2.0 * bbar[(r, j)] * gz_zz[cidx][(r, j)];
                }
                for i in 0..n {
                    s += ubar[(i, r)] * gz_zx[cidx][(r, i)];
                }
                grad[np + r * d + cidx] = s;
            }
        }

        if let (Some(o), Some((v, pv)), Some(wm)) = (old, old_terms.as_ref(), w.as_ref()) {
            let pva = pv * &alpha;
            let vbar = pv * &diff + (&o.shift - &pva) * alpha.transpose();
            let wbar = &o.precision * -0.5;
            let dk_az = grad_from(h, v, &o.z, z);
            let dk_aa = grad_from(h, wm, &o.z, &o.z);
            grad[0] += 2.0 * frob(&vbar, v) + 2.0 * frob(&wbar, wm);
            for p in 1..=d {
                grad[p] += frob(&vbar, &dk_az[p]) + frob(&wbar, &dk_aa[p]);
            }
            let vt = v.transpose();
            let gz_za = cross_grad_from(h, &vt, z, &o.z);
            for r in 0..m {
                for cidx in 0..d {
                    let mut s = 0.0;
                    for a in 0..o.z.nrows() {
                        s += vbar[(a, r)] * gz_za[cidx][(r, a)];
                    }
                    grad[np + r * d + cidx] += s;
                }
            }
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("bound gradient is not finite".into()));
        }
        Some(grad)
    } else {
        None
    };

    Ok(BoundEval {
        value,
        grad,
        posterior: InducingPosterior { kzz: bfac, inner: cfac, alpha, site_precision: g, site_shift: hv },
    })
}
