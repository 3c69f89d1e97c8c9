mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use wgpr_core::kernel::{k_cross_grad_z, k_eval, k_matrix, k_matrix_grad};
use wgpr_core::{Hyperparams, LogHyperparams};

fn hyper_from(v: &DVector<f64>) -> Hyperparams {
    LogHyperparams(v.as_slice().to_vec()).to_hyper().unwrap()
}

#[test]
fn matrix_entries_match_pointwise_evaluation() {
    let mut r = rng(1);
    let h = random_hyper(&mut r, 1);
    let a = uniform_inputs(&mut r, 3, 1, -2.0, 2.0);
    let b = uniform_inputs(&mut r, 2, 1, -2.0, 2.0);
    let k = k_matrix(&h, &a, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            assert_eq!(k[(i, j)], k_eval(&h, &[a[(i, 0)]], &[b[(j, 0)]]).unwrap());
        }
    }
    assert!((k - naive_k(&h, &a, &b)).amax() < 1e-15);
}

#[test]
fn hyperparameter_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(10 + seed);
        let d = 1 + (seed as usize % 3);
        let h = random_hyper(&mut r, d);
        let a = uniform_inputs(&mut r, 4, d, 0.0, 3.0);
        let b = uniform_inputs(&mut r, 3, d, 0.0, 3.0);
        let grads = k_matrix_grad(&h, &a, &b).unwrap();
        assert_eq!(grads.len(), d + 2);
        let lh = DVector::from_vec(h.to_log().0);
        for p in 0..d + 2 {
            let fd = DMatrix::from_fn(4, 3, |i, j| {
                let f = |v: &DVector<f64>| k_matrix(&hyper_from(v), &a, &b).unwrap()[(i, j)];
                fd_grad(f, &lh, 1e-5)[p]
            });
            let scale = fd.norm();
            let err = (&grads[p] - &fd).norm();
            if scale == 0.0 {
                assert!(err == 0.0);
            } else {
                assert!(err / scale < 1e-5, "seed {seed} param {p}: {:e}", err / scale);
            }
        }
    }
}

#[test]
fn pseudo_input_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(40 + seed);
        let d = 1 + (seed as usize % 2);
        let h = random_hyper(&mut r, d);
        let z = uniform_inputs(&mut r, 3, d, 0.0, 3.0);
        let x = uniform_inputs(&mut r, 4, d, 0.0, 3.0);
        let g = k_cross_grad_z(&h, &z, &x).unwrap();
        for c in 0..d {
            for row in 0..3 {
                for j in 0..4 {
                    let f = |v: &DVector<f64>| {
                        let mut zz = z.clone();
                        zz[(row, c)] = v[0];
                        k_matrix(&h, &zz, &x).unwrap()[(row, j)]
                    };
                    let fd = fd_grad(f, &DVector::from_element(1, z[(row, c)]), 1e-5)[0];
                    assert!((g[c][(row, j)] - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
                }
            }
        }
    }
}

#[test]
fn pseudo_input_gradient_is_antisymmetric() {
    let h = Hyperparams::new(1.3, vec![0.7, 1.9], 0.1).unwrap();
    let z = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
    let x = DMatrix::from_row_slice(1, 2, &[1.1, 0.5]);
    let dz = k_cross_grad_z(&h, &z, &x).unwrap();
    let dx = k_cross_grad_z(&h, &x, &z).unwrap();
    for c in 0..2 {
        assert!((dz[c][(0, 0)] + dx[c][(0, 0)]).abs() < 1e-15);
    }
}

#[test]
fn kernel_matrices_with_jitter_factorize() {
    let mut r = rng(3);
    for n in [10, 50, 200] {
        let h = random_hyper(&mut r, 2);
        let a = uniform_inputs(&mut r, n, 2, 0.0, 3.0);
        let k = k_matrix(&h, &a, &a).unwrap() + DMatrix::identity(n, n) * 1e-6 * h.signal_variance();
        assert!(k.cholesky().is_some(), "n = {n}");
    }
}

proptest! {
    #[test]
    fn symmetric_and_bounded(
        sf in 0.1f64..5.0,
        l in 0.1f64..5.0,
        x in proptest::collection::vec(-10.0f64..10.0, 2),
        y in proptest::collection::vec(-10.0f64..10.0, 2),
    ) {
        let h = Hyperparams::new(sf, vec![l, 2.0 * l], 0.1).unwrap();
        let a = k_eval(&h, &x, &y).unwrap();
        let b = k_eval(&h, &y, &x).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0 && a <= sf * sf);
        if x != y {
            prop_assert!(a < sf * sf);
        }
        prop_assert_eq!(k_eval(&h, &x, &x).unwrap(), sf * sf);
    }

    #[test]
    fn log_round_trip(sf in 1e-3f64..1e3, l in 1e-3f64..1e3, sn in 1e-4f64..10.0) {
        let h = Hyperparams::new(sf, vec![l], sn).unwrap();
        let back = h.to_log().to_hyper().unwrap();
        prop_assert!((back.sigma_f() - sf).abs() <= 4.0 * f64::EPSILON * sf);
        prop_assert!((back.lengthscales()[0] - l).abs() <= 4.0 * f64::EPSILON * l);
        prop_assert!((back.sigma_n() - sn).abs() <= 4.0 * f64::EPSILON * sn);
    }
}
