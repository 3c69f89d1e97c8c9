//! Streaming update of a sparse GP with a new batch.
//!
//! The old model enters only through its pseudo-point summary
//! `(Za, mu_a, S_a, theta_old)`; raw past data is never revisited. With
//! hyperparameters and pseudo-inputs frozen the update reproduces the batch
//! posterior on all data seen so far.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::bound::{evaluate, pack, unpack, BoundEval};
use crate::data::Batch;
use crate::error::{check_dim, invalid, Result};
use crate::kernel::Hyperparams;
use crate::metric::FiniteGaussian;
use crate::optimize::{minimize, OptimizeConfig};
use crate::sparse::{distinct_rows, sample_subset, SparseGP};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamUpdateConfig {
    /// Pseudo-point budget after the update; `None` keeps the old size.
    pub m_new: Option<usize>,
    pub optimizer: OptimizeConfig,
    /// Largest admissible `|m_upd(Z_b)|`.
    pub divergence_mean_cap: f64,
    /// Share of the starting pseudo-inputs drawn from the new inputs in place
    /// of old ones. At 0 the update starts from `Z_a` (topped up when the
    /// budget grows).
    pub refresh_fraction: f64,
    /// Seed for choosing among old and new inputs.
    pub seed: u64,
}

impl Default for StreamUpdateConfig {
    fn default() -> Self {
        Self { m_new: None, optimizer: OptimizeConfig::default(), divergence_mean_cap: 1e6, refresh_fraction: 0.0, seed: 0 }
    }
}

impl StreamUpdateConfig {
    /// Keep `(theta, Z)` fixed and only absorb the data.
    pub fn frozen() -> Self {
        Self { optimizer: OptimizeConfig::frozen(), ..Self::default() }
    }
}

/// Why an update was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instability {
    /// Non-finite bound where the optimizer could not back off.
    OptimizerDiverged,
    /// A factorization failed after the jitter ladder.
    Factorization,
    /// `|m_upd(Z_b)|` exceeded the cap or was non-finite.
    MeanBlowup,
    /// The updated pseudo-output covariance is not positive semidefinite.
    IndefiniteCovariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamDiagnostics {
    pub bound: f64,
    pub iterations: usize,
    pub max_abs_mean: f64,
}

#[derive(Debug, Clone)]
pub struct StreamUpdateOutcome {
    /// Present iff the update is stable.
    pub updated: Option<SparseGP>,
    pub stable: bool,
    pub reason: Option<Instability>,
    pub diagnostics: StreamDiagnostics,
}

impl StreamUpdateOutcome {
    fn unstable(reason: Instability, diagnostics: StreamDiagnostics) -> Self {
        Self { updated: None, stable: false, reason: Some(reason), diagnostics }
    }
}

/// Online bound for absorbing `new_data` into `old` with new pseudo-inputs
/// `z_b` and hyperparameters `h_new`; gradient over log-hyperparameters then
/// `z_b` row-major.
///
/// The value approximates `log p(y_new | y_old)`: adding the old model's
/// own bound gives the batch bound on all the data.
pub fn ovfe_objective(
    old: &SparseGP,
    z_b: &DMatrix<f64>,
    h_new: &Hyperparams,
    new_data: &Batch,
) -> Result<(f64, DVector<f64>)> {
    check_dim(old.dim(), h_new.dim())?;
    let site = old.old_site();
    let BoundEval { value, grad, .. } = evaluate(h_new, z_b, new_data, Some(&site), true)?;
    Ok((value, grad.expect("gradient requested")))
}

/// Starting pseudo-inputs: a subset of the old ones plus a subset of the
/// new inputs, `max(m_new - M_a, round(refresh * m_new))` of them.
fn initial_pseudo_inputs(old: &SparseGP, new_data: &Batch, m_new: usize, refresh: f64, seed: u64) -> DMatrix<f64> {
    let za = old.z();
    let ma = za.nrows();
    let pool: Vec<usize> = distinct_rows(new_data.x())
        .into_iter()
        .filter(|&i| !(0..ma).any(|r| za.row(r) == new_data.x().row(i)))
        .collect();
    let wanted = m_new.saturating_sub(ma).max(libm::round(refresh * m_new as f64) as usize);
    let n_new = wanted.min(pool.len()).min(m_new);
    let n_old = (m_new - n_new).min(ma);
    if n_new == 0 && n_old == ma {
        return za.clone();
    }
    let keep = sample_subset(&(0..ma).collect::<Vec<_>>(), n_old, seed);
    let extra = sample_subset(&pool, n_new, seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut z = DMatrix::zeros(n_old + n_new, za.ncols());
    for (k, &r) in keep.iter().enumerate() {
        z.row_mut(k).copy_from(&za.row(r));
    }
    for (k, &i) in extra.iter().enumerate() {
        z.row_mut(n_old + k).copy_from(&new_data.x().row(i));
    }
    z
}

/// Absorb `new_data` into a copy of `old`.
///
/// Instability is reported in the outcome, never as an error; errors are
/// reserved for invalid arguments.
pub fn stream_update(old: &SparseGP, new_data: &Batch, cfg: &StreamUpdateConfig) -> Result<StreamUpdateOutcome> {
    check_dim(old.dim(), new_data.dim())?;
    if new_data.is_empty() {
        return Err(invalid("stream update needs a non-empty batch"));
    }
    let m_new = cfg.m_new.unwrap_or(old.n_pseudo());
    if m_new == 0 {
        return Err(invalid("pseudo-point budget must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.refresh_fraction) {
        return Err(invalid("refresh fraction must lie in [0, 1]"));
    }
    let mut diag = StreamDiagnostics { bound: f64::NAN, iterations: 0, max_abs_mean: f64::NAN };

    let site = old.old_site();
    let z0 = initial_pseudo_inputs(old, new_data, m_new, cfg.refresh_fraction, cfg.seed);
    let (m, d) = z0.shape();
    let x0 = pack(old.hyper(), &z0);
    let objective = |v: &DVector<f64>| {
        let (h, z) = unpack(v, d, m).ok()?;
        let e = evaluate(&h, &z, new_data, Some(&site), true).ok()?;
        Some((-e.value, -e.grad?))
    };
    let res = match minimize(objective, x0, &cfg.optimizer) {
        Ok(r) => r,
        Err(_) => return Ok(StreamUpdateOutcome::unstable(Instability::Factorization, diag)),
    };
    diag.bound = -res.value;
    diag.iterations = res.iterations;
    if res.diverged {
        return Ok(StreamUpdateOutcome::unstable(Instability::OptimizerDiverged, diag));
    }

    let Ok((h, z)) = unpack(&res.argmin, d, m) else {
        return Ok(StreamUpdateOutcome::unstable(Instability::OptimizerDiverged, diag));
    };
    let Ok(eval) = evaluate(&h, &z, new_data, Some(&site), false) else {
        return Ok(StreamUpdateOutcome::unstable(Instability::Factorization, diag));
    };
    let updated = SparseGP::from_posterior(h, z, eval.posterior, old.n_seen() + new_data.len(), true);

    let (mean_at_z, _) = match updated.predict_marginal(updated.z()) {
        Ok(p) => p,
        Err(_) => return Ok(StreamUpdateOutcome::unstable(Instability::Factorization, diag)),
    };
    diag.max_abs_mean = mean_at_z.iter().fold(0.0_f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY });
    if !(diag.max_abs_mean <= cfg.divergence_mean_cap) {
        return Ok(StreamUpdateOutcome::unstable(Instability::MeanBlowup, diag));
    }
    if FiniteGaussian::new(updated.mu_z().clone(), updated.s_z().clone()).is_err() {
        return Ok(StreamUpdateOutcome::unstable(Instability::IndefiniteCovariance, diag));
    }
    Ok(StreamUpdateOutcome { updated: Some(updated), stable: true, reason: None, diagnostics: diag })
}
