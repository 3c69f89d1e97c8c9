#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wgpr_core::{Batch, Hyperparams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Points on a jittered grid so that kernel matrices stay well conditioned.
pub fn spread_inputs(r: &mut ChaCha8Rng, n: usize, d: usize, spacing: f64) -> DMatrix<f64> {
    let per_axis = (n as f64).powf(1.0 / d as f64).ceil() as usize;
    DMatrix::from_fn(n, d, |i, c| {
        let cell = (i / per_axis.pow(c as u32)) % per_axis;
        (cell as f64 + r.random_range(-0.2..0.2)) * spacing
    })
}

pub fn uniform_inputs(r: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| r.random_range(lo..hi))
}

pub fn targets(r: &mut ChaCha8Rng, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let s: f64 = x.row(i).iter().map(|v| (0.7 * v).sin()).sum();
        s + 0.1 * r.random_range(-1.0..1.0)
    })
}

pub fn random_hyper(r: &mut ChaCha8Rng, d: usize) -> Hyperparams {
    Hyperparams::new(
        r.random_range(0.5..2.0),
        (0..d).map(|_| r.random_range(0.6..1.5)).collect(),
        r.random_range(0.1..0.8),
    )
    .unwrap()
}

pub fn batch(x: DMatrix<f64>, y: DVector<f64>) -> Batch {
    Batch::new(x, y).unwrap()
}

/// Normwise relative difference of two vectors.
pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Central finite differences of a scalar function.
pub fn fd_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, step: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += step;
        m[i] -= step;
        (f(&p) - f(&m)) / (2.0 * step)
    })
}

/// Log-hyperparameters followed by `z` row-major.
pub fn pack(h: &Hyperparams, z: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = h.to_log().0;
    for r in 0..z.nrows() {
        v.extend(z.row(r).iter());
    }
    DVector::from_vec(v)
}

pub fn unpack(v: &DVector<f64>, d: usize, m: usize) -> (Hyperparams, DMatrix<f64>) {
    let h = wgpr_core::LogHyperparams(v.as_slice()[..d + 2].to_vec()).to_hyper().unwrap();
    (h, DMatrix::from_row_slice(m, d, &v.as_slice()[d + 2..]))
}

/// Dense SE kernel written independently of the library.
pub fn naive_k(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let l = h.lengthscales();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut s = 0.0;
        for c in 0..a.ncols() {
            let t = (a[(i, c)] - b[(j, c)]) / l[c];
            s += t * t;
        }
        h.sigma_f() * h.sigma_f() * (-0.5 * s).exp()
    })
}

pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}
