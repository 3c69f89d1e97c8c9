mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use wgpr_core::ensemble::{kernel_weight, CandidateScore};
use wgpr_core::sparse::{condition, predict_sparse};
use wgpr_core::{Batch, Decision, Ensemble, EnsembleConfig, Hyperparams, OptimizeConfig, SparseGP, WeightedMode};

fn quick_config(epsilon: f64) -> EnsembleConfig {
    EnsembleConfig {
        pseudo_points: 8,
        epsilon,
        j_hat: 3,
        optimizer: OptimizeConfig::default().with_max_iters(15),
        stream_optimizer: OptimizeConfig::default().with_max_iters(10),
        seed: 5,
        ..Default::default()
    }
}

fn segment(seed: u64, lo: f64, hi: f64, n: usize) -> Batch {
    let mut r = rng(seed);
    let x = uniform_inputs(&mut r, n, 1, lo, hi);
    let y = targets(&mut r, &x);
    batch(x, y)
}

fn same_model(a: &SparseGP, b: &SparseGP) -> bool {
    a.z() == b.z() && a.mu_z() == b.mu_z() && a.s_z() == b.s_z() && a.hyper() == b.hyper()
}

/// An ensemble of conditioned models at random places, built without fitting.
fn random_ensemble(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> Ensemble {
    let j = r.random_range(1..8);
    let models = (0..j)
        .map(|_| {
            let lo = r.random_range(-20.0..20.0);
            let x = uniform_inputs(r, 15, d, lo, lo + 5.0);
            let y = targets(r, &x);
            let m = r.random_range(1..6);
            let z = uniform_inputs(r, m, d, lo, lo + 5.0);
            condition(&random_hyper(r, d), &z, &batch(x, y)).unwrap()
        })
        .collect();
    Ensemble::from_parts(models, j, quick_config(1.0), 1e6).unwrap()
}

fn brute_nearest_model(ens: &Ensemble, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
    for (j, m) in ens.models().iter().enumerate() {
        for i in 0..m.n_pseudo() {
            let d: f64 = m.pseudo_input(i).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if (d, j, i) < best {
                best = (d, j, i);
            }
        }
    }
    best.1
}

#[test]
fn initial_ensemble_has_one_model_and_is_deterministic() {
    let b = segment(1, 0.0, 10.0, 40);
    let a = Ensemble::init(&b, quick_config(1.0)).unwrap();
    let c = Ensemble::init(&b, quick_config(1.0)).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a.batch_count(), 1);
    assert!(same_model(&a.models()[0], &c.models()[0]));

    let small = segment(2, 0.0, 10.0, 5);
    let e = Ensemble::init(&small, quick_config(1.0)).unwrap();
    assert_eq!(e.models()[0].n_pseudo(), 5);
}

#[test]
fn pruning_picks_nearest_centers() {
    let h = Hyperparams::new(1.0, vec![1.0], 0.1).unwrap();
    let models: Vec<SparseGP> = [0.0, 10.0, 20.0]
        .iter()
        .map(|&c| {
            let z = DMatrix::from_column_slice(2, 1, &[c - 1.0, c + 1.0]);
            condition(&h, &z, &segment(3, c - 2.0, c + 2.0, 10)).unwrap()
        })
        .collect();
    let mut cfg = quick_config(1.0);
    cfg.j_hat = 1;
    let ens = Ensemble::from_parts(models.clone(), 3, cfg, 1e6).unwrap();
    let b = batch(DMatrix::from_column_slice(3, 1, &[0.5, 1.0, 1.5]), DVector::zeros(3));
    assert_eq!(ens.prune_candidates(&b), vec![0]);
    let wide = Ensemble::from_parts(models, 3, quick_config(1.0), 1e6).unwrap();
    assert_eq!(wide.prune_candidates(&b), vec![0, 1, 2]);
}

#[test]
fn pruning_and_prediction_match_exhaustive_search() {
    let mut r = rng(11);
    for _ in 0..50 {
        let d = r.random_range(1..=2);
        let ens = random_ensemble(&mut r, d);
        let q = uniform_inputs(&mut r, 6, d, -25.0, 25.0);
        let b = batch(q.clone(), DVector::zeros(6));

        let c_new = b.input_center();
        let mut order: Vec<(f64, usize)> =
            ens.models().iter().enumerate().map(|(j, m)| ((m.center() - &c_new).norm_squared(), j)).collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = order.iter().take(ens.j_hat()).map(|p| p.1).collect();
        assert_eq!(ens.prune_candidates(&b), want);

        let rows = ens.predict_batch(&q).unwrap();
        for i in 0..6 {
            let x: Vec<f64> = q.row(i).iter().copied().collect();
            let p = ens.predict(&x).unwrap();
            assert_eq!(p.model_index, brute_nearest_model(&ens, &x));
            assert_eq!(rows[i].model_index, p.model_index);
            assert!((rows[i].mean - p.mean).abs() < 1e-12 && (rows[i].variance - p.variance).abs() < 1e-12);
            assert!(p.variance >= 0.0);
        }
    }
}

#[test]
fn single_model_prediction_is_the_model_predictive() {
    let ens = Ensemble::init(&segment(1, 0.0, 10.0, 30), quick_config(1.0)).unwrap();
    let xs = DMatrix::from_column_slice(3, 1, &[0.5, 4.0, 12.0]);
    let (m, c) = predict_sparse(&ens.models()[0], &xs).unwrap();
    for i in 0..3 {
        let p = ens.predict(&[xs[(i, 0)]]).unwrap();
        assert!((p.mean - m[i]).abs() < 1e-12);
        assert!((p.variance - c[(i, i)]).abs() < 1e-12);
        let (wm, wv) = ens.baseline_predict_weighted(&[xs[(i, 0)]], WeightedMode::TopK(3)).unwrap();
        assert!((wm - m[i]).abs() < 1e-12 && (wv - c[(i, i)]).abs() < 1e-12);
    }
}

#[test]
fn disjoint_models_are_selected_by_pseudo_input() {
    let h = Hyperparams::new(1.0, vec![1.0], 0.1).unwrap();
    let a = condition(&h, &DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), &segment(1, 0.0, 1.0, 5)).unwrap();
    let b = condition(&h, &DMatrix::from_column_slice(2, 1, &[10.0, 11.0]), &segment(2, 10.0, 11.0, 5)).unwrap();
    let ens = Ensemble::from_parts(vec![a, b], 2, quick_config(1.0), 1e6).unwrap();
    assert_eq!(ens.predict(&[0.5]).unwrap().model_index, 0);
    assert_eq!(ens.predict(&[10.2]).unwrap().model_index, 1);
    // Equidistant: the lower index wins.
    assert_eq!(ens.predict(&[5.5]).unwrap().model_index, 0);
}

#[test]
fn replayed_batch_is_absorbed() {
    let b = segment(4, 0.0, 10.0, 60);
    let mut ens = Ensemble::init(&b, quick_config(1e3)).unwrap();
    let rep = ens.train_step(&b).unwrap();
    assert_eq!(rep.decision, Decision::Updated(0));
    assert_eq!(ens.len(), 1);
}

#[test]
fn zero_threshold_always_splits() {
    let mut ens = Ensemble::init(&segment(5, 0.0, 10.0, 30), quick_config(0.0)).unwrap();
    for k in 0..3 {
        let rep = ens.train_step(&segment(6 + k, 0.0, 10.0, 30)).unwrap();
        assert_eq!(rep.decision, Decision::Split(k as usize + 1));
    }
    assert_eq!(ens.len(), 4);
}

#[test]
fn infinite_threshold_never_splits() {
    let mut ens = Ensemble::init(&segment(5, 0.0, 10.0, 30), quick_config(f64::INFINITY)).unwrap();
    for k in 0..3 {
        ens.train_step(&segment(6 + k, 10.0 * k as f64, 10.0 * k as f64 + 10.0, 30)).unwrap();
    }
    assert_eq!(ens.len(), 1);
}

#[test]
fn unstable_candidates_force_a_split() {
    let mut cfg = quick_config(f64::INFINITY);
    // Every update's mean exceeds a vanishing cap.
    cfg.mean_cap_factor = 1e-12;
    let mut ens = Ensemble::init(&segment(5, 0.0, 10.0, 30), cfg).unwrap();
    let rep = ens.train_step(&segment(7, 0.0, 10.0, 30)).unwrap();
    assert_eq!(rep.decision, Decision::Split(1));
    assert!(rep.scores.iter().all(|s| !s.stable && s.w_total == f64::INFINITY));
}

#[test]
fn argmin_does_not_depend_on_the_threshold() {
    let first = segment(8, 0.0, 10.0, 30);
    let mut low = Ensemble::init(&first, quick_config(0.0)).unwrap();
    low.train_step(&segment(9, 20.0, 30.0, 30)).unwrap();
    let mut high = low.clone();
    high.set_epsilon(1e9);
    let next = segment(10, 5.0, 15.0, 30);
    let a = low.train_step(&next).unwrap();
    let b = high.train_step(&next).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.best_finite().map(|s| s.index), b.best_finite().map(|s| s.index));
    assert!(matches!(a.decision, Decision::Split(_)));
    assert!(matches!(b.decision, Decision::Updated(_)));
}

fn check_step(before: &Ensemble, after: &Ensemble, rep: &wgpr_core::StepReport) -> Result<(), TestCaseError> {
    let eps = before.epsilon();
    let best: Option<&CandidateScore> =
        rep.scores.iter().filter(|s| s.stable && s.w_total.is_finite()).min_by(|a, b| {
            a.w_total.partial_cmp(&b.w_total).unwrap().then(a.index.cmp(&b.index))
        });
    prop_assert_eq!(after.batch_count(), before.batch_count() + 1);
    prop_assert!(after.len() <= after.batch_count());
    match rep.decision {
        Decision::Updated(j) => {
            let b = best.expect("an update needs a finite score");
            prop_assert_eq!(b.index, j);
            prop_assert!(b.w_total <= eps);
            prop_assert_eq!(after.len(), before.len());
            for (k, m) in before.models().iter().enumerate() {
                if k != j {
                    prop_assert!(same_model(m, &after.models()[k]));
                }
            }
        }
        Decision::Split(j) => {
            prop_assert!(best.map_or(true, |b| b.w_total > eps));
            prop_assert_eq!(j, before.len());
            prop_assert_eq!(after.len(), before.len() + 1);
            for (k, m) in before.models().iter().enumerate() {
                prop_assert!(same_model(m, &after.models()[k]));
            }
        }
        Decision::Initialized | Decision::Rejected => prop_assert!(false, "not produced by a step"),
    }
    prop_assert_eq!(rep.scores.len(), rep.candidates.len());
    for (s, &c) in rep.scores.iter().zip(&rep.candidates) {
        prop_assert_eq!(s.index, c);
        if s.stable {
            prop_assert!((s.w_total - (s.w_old + s.w_new)).abs() <= 1e-12 * s.w_total.abs());
        } else {
            prop_assert_eq!(s.w_total, f64::INFINITY);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steps_follow_the_decision_rule(seed in 0u64..1000, log_eps in -3.0f64..2.0, shifts in proptest::collection::vec(-15.0f64..15.0, 3)) {
        let mut cfg = quick_config(10f64.powf(log_eps));
        cfg.seed = seed;
        let mut ens = Ensemble::init(&segment(seed, 0.0, 6.0, 25), cfg).unwrap();
        for (k, s) in shifts.iter().enumerate() {
            let before = ens.clone();
            let rep = ens.train_step(&segment(seed + 1 + k as u64, *s, s + 6.0, 25)).unwrap();
            check_step(&before, &ens, &rep)?;
        }
    }
}

#[test]
fn training_runs_are_reproducible() {
    let run = || {
        let mut ens = Ensemble::init(&segment(1, 0.0, 10.0, 30), quick_config(0.05)).unwrap();
        let reps: Vec<_> = (0..4).map(|k| ens.train_step(&segment(2 + k, 5.0 * k as f64, 5.0 * k as f64 + 10.0, 30)).unwrap()).collect();
        (ens, reps)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.models().iter().zip(b.models()) {
        assert!(same_model(x, y));
    }
}

#[test]
fn failed_fresh_fit_leaves_the_ensemble_unchanged() {
    let mut ens = Ensemble::init(&segment(1, 0.0, 10.0, 30), quick_config(1.0)).unwrap();
    let snapshot = ens.clone();
    let wrong_dim = batch(DMatrix::zeros(3, 2), DVector::zeros(3));
    assert!(ens.train_step(&wrong_dim).is_err());
    assert!(ens.train_step(&Batch::empty(1)).is_err());
    assert_eq!(ens.batch_count(), snapshot.batch_count());
    assert!(same_model(&ens.models()[0], &snapshot.models()[0]));
}

#[test]
fn baseline_updates_centered_batches_and_splits_far_ones() {
    let first = segment(1, 0.0, 10.0, 30);
    let mut ens = Ensemble::init(&first, quick_config(1.0)).unwrap();
    let m = &ens.models()[0];
    let c = m.center();
    let sf2 = m.hyper().signal_variance();
    assert!((kernel_weight(m.hyper(), &c, &c) - sf2).abs() < 1e-12);
    let centered = batch(DMatrix::from_column_slice(2, 1, &[c[0] - 0.5, c[0] + 0.5]), DVector::from_vec(vec![0.1, 0.2]));
    let rep = ens.baseline_train_step(&centered, 0.5 * kernel_weight(m.hyper(), &c, &centered.input_center())).unwrap();
    assert_eq!(rep.decision, Decision::Updated(0));

    let l = ens.models()[0].hyper().lengthscales()[0];
    let far = segment(2, c[0] + 40.0 * l, c[0] + 40.0 * l + 5.0, 20);
    let rep = ens.baseline_train_step(&far, 1e-6).unwrap();
    assert_eq!(rep.decision, Decision::Split(1));
    assert!(rep.weights[0].1 < 1e-6);
}

#[test]
fn weighted_prediction_averages() {
    let h = Hyperparams::new(1.0, vec![2.0], 0.1).unwrap();
    let mk = |c: f64, level: f64| {
        let z = DMatrix::from_column_slice(2, 1, &[c - 1.0, c + 1.0]);
        let x = DMatrix::from_column_slice(4, 1, &[c - 1.0, c - 0.3, c + 0.3, c + 1.0]);
        condition(&h, &z, &batch(x, DVector::from_element(4, level))).unwrap()
    };
    let ens = Ensemble::from_parts(vec![mk(-3.0, 1.0), mk(3.0, -2.0)], 2, quick_config(1.0), 1e6).unwrap();
    let (m0, _) = ens.models()[0].predict_point(&[0.0]).unwrap();
    let (m1, _) = ens.models()[1].predict_point(&[0.0]).unwrap();
    let (m, _) = ens.baseline_predict_weighted(&[0.0], WeightedMode::Activated { w_gen: 0.0 }).unwrap();
    assert!((m - 0.5 * (m0 + m1)).abs() < 1e-12);

    let (k1, v1) = ens.baseline_predict_weighted(&[2.0], WeightedMode::TopK(1)).unwrap();
    let (n1, nv1) = ens.models()[1].predict_point(&[2.0]).unwrap();
    assert_eq!((k1, v1), (n1, nv1));

    // Nothing activated: the nearest center answers.
    let (f, _) = ens.baseline_predict_weighted(&[-2.5], WeightedMode::Activated { w_gen: 10.0 }).unwrap();
    assert_eq!(f, ens.models()[0].predict_point(&[-2.5]).unwrap().0);
}
