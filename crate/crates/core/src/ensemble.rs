//! Ensemble of local sparse GPs grown by Wasserstein splitting.
//!
//! Each incoming batch is tentatively absorbed by the nearest `j_hat` models
//! (by pseudo-input centroid) while a fresh model is fit to the batch alone.
//! A candidate's score is the squared Wasserstein change of its posterior at
//! its old pseudo-inputs plus its disagreement with the fresh model at the new
//! inputs. The best candidate keeps its update if its score is within
//! `epsilon`; otherwise the fresh model is appended. All other tentative
//! updates are discarded.
//!
//! A distance-splitting baseline (kernel weight of the batch centroid against
//! model centroids) shares the same plumbing for comparisons.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::{std_dev, Batch};
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::Hyperparams;
use crate::metric::{similarity_new, similarity_old, similarity_total};
use crate::optimize::OptimizeConfig;
use crate::sparse::{fit_vfe, SparseGP};
use crate::stream::{stream_update, StreamUpdateConfig, StreamUpdateOutcome};

/// Multiple of the first batch's target spread beyond which an updated
/// posterior mean counts as diverged.
pub const DEFAULT_MEAN_CAP_FACTOR: f64 = 1e6;

/// Batches arriving in new territory need pseudo-inputs there from the start.
pub const DEFAULT_REFRESH_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Pseudo-point budget per model.
    pub pseudo_points: usize,
    /// Instantiation threshold on the summed squared distance.
    pub epsilon: f64,
    /// Number of nearest models scored per batch.
    pub j_hat: usize,
    /// Optimizer for fresh fits.
    pub optimizer: OptimizeConfig,
    /// Optimizer for candidate stream updates.
    pub stream_optimizer: OptimizeConfig,
    pub mean_cap_factor: f64,
    /// Share of a candidate's starting pseudo-inputs taken from the new batch.
    pub refresh_fraction: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            pseudo_points: 50,
            epsilon: 1.0,
            j_hat: 5,
            optimizer: OptimizeConfig::default(),
            stream_optimizer: OptimizeConfig::default(),
            mean_cap_factor: DEFAULT_MEAN_CAP_FACTOR,
            refresh_fraction: DEFAULT_REFRESH_FRACTION,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    fn validate(&self) -> Result<()> {
        if self.pseudo_points == 0 || self.j_hat == 0 {
            return Err(invalid("pseudo_points and j_hat must be positive"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(invalid("epsilon must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.refresh_fraction) {
            return Err(invalid("refresh fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Initialized,
    /// The model at this index absorbed the batch.
    Updated(usize),
    /// A new model was appended at this index.
    Split(usize),
    /// Single-stream only: the update was unstable and the batch was dropped.
    Rejected,
}

/// Score of one tentative update.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub index: usize,
    pub w_old: f64,
    pub w_new: f64,
    pub w_total: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub decision: Decision,
    /// WGPR scores of the pruned candidates, in candidate order.
    pub scores: Vec<CandidateScore>,
    /// Candidate indices, nearest centroid first.
    pub candidates: Vec<usize>,
    /// Baseline only: kernel weight of the batch centroid per model.
    pub weights: Vec<(usize, f64)>,
}

impl StepReport {
    /// Smallest finite total score, if any.
    pub fn best_finite(&self) -> Option<&CandidateScore> {
        self.scores
            .iter()
            .filter(|s| s.w_total.is_finite())
            .fold(None, |best: Option<&CandidateScore>, s| match best {
                Some(b) if b.w_total <= s.w_total => Some(b),
                _ => Some(s),
            })
    }
}

/// Predictive at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub model_index: usize,
}

/// How the baseline combines local predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightedMode {
    /// Models whose weight at the query exceeds `w_gen`.
    Activated { w_gen: f64 },
    /// The `k` models with the nearest centroids.
    TopK(usize),
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    models: Vec<SparseGP>,
    batch_count: usize,
    config: EnsembleConfig,
    mean_cap: f64,
}

/// SplitMix64 finalizer, used to derive per-step seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

/// Kernel weight `sf^2 exp(-1/2 (x - c)' L^-1 (x - c))` under `h`.
pub fn kernel_weight(h: &Hyperparams, x: &DVector<f64>, center: &DVector<f64>) -> f64 {
    crate::kernel::k_eval(h, x.as_slice(), center.as_slice()).unwrap_or(0.0)
}

impl Ensemble {
    /// Fit the first model to `first_batch`.
    pub fn init(first_batch: &Batch, config: EnsembleConfig) -> Result<Self> {
        config.validate()?;
        if first_batch.is_empty() {
            return Err(invalid("the first batch must not be empty"));
        }
        let init = Hyperparams::from_data(first_batch);
        let seed = mix(config.seed ^ mix(0));
        let gp = fit_vfe(first_batch, config.pseudo_points, &init, &config.optimizer, seed)?;
        let spread = std_dev(first_batch.y().iter());
        let spread = if spread > 0.0 { spread } else { first_batch.y().amax().max(1.0) };
        let mean_cap = config.mean_cap_factor * spread;
        Ok(Self { models: alloc::vec![gp], batch_count: 1, config, mean_cap })
    }

    /// Reassemble an ensemble from stored parts.
    pub fn from_parts(models: Vec<SparseGP>, batch_count: usize, config: EnsembleConfig, mean_cap: f64) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::State("an ensemble needs at least one model".into()));
        }
        let d = models[0].dim();
        for m in &models {
            check_dim(d, m.dim())?;
        }
        Ok(Self { models, batch_count, config, mean_cap })
    }

    pub fn models(&self) -> &[SparseGP] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn batch_count(&self) -> usize {
        self.batch_count
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.config.epsilon = epsilon;
    }

    pub fn j_hat(&self) -> usize {
        self.config.j_hat
    }

    pub fn mean_cap(&self) -> f64 {
        self.mean_cap
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    fn stream_config(&self, candidate: usize) -> StreamUpdateConfig {
        StreamUpdateConfig {
            m_new: None,
            optimizer: self.config.stream_optimizer.clone(),
            divergence_mean_cap: self.mean_cap,
            refresh_fraction: self.config.refresh_fraction,
            seed: mix(self.config.seed ^ mix(self.batch_count as u64 + 1) ^ mix(candidate as u64 + 0x5151)),
        }
    }

    fn fresh_seed(&self) -> u64 {
        mix(self.config.seed ^ mix(self.batch_count as u64 + 1))
    }

    /// Indices of the `j_hat` models whose pseudo-input centroid is closest to
    /// the batch centroid; ties go to the lower index.
    pub fn prune_candidates(&self, new_batch: &Batch) -> Vec<usize> {
        let c_new = new_batch.input_center();
        let mut order: Vec<(f64, usize)> = self
            .models
            .iter()
            .enumerate()
            .map(|(j, m)| (sq_dist(&m.center(), &c_new), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().take(self.config.j_hat).map(|(_, j)| j).collect()
    }

    fn fit_fresh(&self, batch: &Batch, warm_from: usize) -> Result<SparseGP> {
        let init = self.models[warm_from].hyper().clone();
        fit_vfe(batch, self.config.pseudo_points, &init, &self.config.optimizer, self.fresh_seed())
    }

    fn score(&self, j: usize, fresh: &SparseGP, batch: &Batch) -> Result<(CandidateScore, StreamUpdateOutcome)> {
        let model = &self.models[j];
        let outcome = stream_update(model, batch, &self.stream_config(j))?;
        let score = match outcome.updated.as_ref() {
            Some(upd) => {
                let w_old = similarity_old(model, upd).unwrap_or(f64::INFINITY);
                let w_new = similarity_new(fresh, upd, batch.x()).unwrap_or(f64::INFINITY);
                let w_total = similarity_total(w_old, w_new);
                CandidateScore { index: j, w_old, w_new, w_total, stable: true }
            }
            None => CandidateScore {
                index: j,
                w_old: f64::INFINITY,
                w_new: f64::INFINITY,
                w_total: f64::INFINITY,
                stable: false,
            },
        };
        Ok((score, outcome))
    }

    /// One round of Wasserstein-split training on `new_batch`.
    ///
    /// On error the ensemble is left untouched.
    pub fn train_step(&mut self, new_batch: &Batch) -> Result<StepReport> {
        check_dim(self.dim(), new_batch.dim())?;
        if new_batch.is_empty() {
            return Err(invalid("training batch must not be empty"));
        }
        let candidates = self.prune_candidates(new_batch);
        let fresh = self.fit_fresh(new_batch, candidates[0])?;

        let mut scores = Vec::with_capacity(candidates.len());
        let mut updates = Vec::with_capacity(candidates.len());
        for &j in &candidates {
            let (score, outcome) = self.score(j, &fresh, new_batch)?;
            scores.push(score);
            updates.push(outcome.updated);
        }

        let mut best: Option<usize> = None;
        for (k, s) in scores.iter().enumerate() {
            if !s.stable || !s.w_total.is_finite() {
                continue;
            }
            best = match best {
                Some(b) if scores[b].w_total < s.w_total => Some(b),
                Some(b) if scores[b].w_total == s.w_total && scores[b].index < s.index => Some(b),
                _ => Some(k),
            };
        }

        let decision = match best {
            Some(k) if scores[k].w_total <= self.config.epsilon => {
                let j = scores[k].index;
                self.models[j] = updates[k].take().expect("stable candidates carry an update");
                Decision::Updated(j)
            }
            _ => {
                self.models.push(fresh);
                Decision::Split(self.models.len() - 1)
            }
        };
        self.batch_count += 1;
        Ok(StepReport { decision, scores, candidates, weights: Vec::new() })
    }

    /// Distance-splitting baseline: update the model whose centroid has the
    /// largest kernel weight at the batch centroid if that weight reaches
    /// `w_gen`, otherwise fit a new model. An unstable update also splits.
    pub fn baseline_train_step(&mut self, new_batch: &Batch, w_gen: f64) -> Result<StepReport> {
        check_dim(self.dim(), new_batch.dim())?;
        if new_batch.is_empty() {
            return Err(invalid("training batch must not be empty"));
        }
        let c_new = new_batch.input_center();
        let weights: Vec<(usize, f64)> = self
            .models
            .iter()
            .enumerate()
            .map(|(j, m)| (j, kernel_weight(m.hyper(), &c_new, &m.center())))
            .collect();
        let (best, w_best) = weights
            .iter()
            .fold((0, f64::NEG_INFINITY), |acc, &(j, w)| if w > acc.1 { (j, w) } else { acc });
        let candidates = self.prune_candidates(new_batch);

        let mut scores = Vec::new();
        if w_best >= w_gen {
            let outcome = stream_update(&self.models[best], new_batch, &self.stream_config(best))?;
            let stable = outcome.stable;
            scores.push(CandidateScore { index: best, w_old: f64::NAN, w_new: f64::NAN, w_total: f64::NAN, stable });
            if let Some(upd) = outcome.updated {
                self.models[best] = upd;
                self.batch_count += 1;
                return Ok(StepReport { decision: Decision::Updated(best), scores, candidates, weights });
            }
        }
        let fresh = self.fit_fresh(new_batch, candidates[0])?;
        self.models.push(fresh);
        self.batch_count += 1;
        Ok(StepReport { decision: Decision::Split(self.models.len() - 1), scores, candidates, weights })
    }

    /// Stream every batch into the first model, never splitting. Unstable
    /// updates are dropped.
    pub fn single_stream_step(&mut self, new_batch: &Batch) -> Result<StepReport> {
        check_dim(self.dim(), new_batch.dim())?;
        if new_batch.is_empty() {
            return Err(invalid("training batch must not be empty"));
        }
        let outcome = stream_update(&self.models[0], new_batch, &self.stream_config(0))?;
        let stable = outcome.stable;
        let scores =
            alloc::vec![CandidateScore { index: 0, w_old: f64::NAN, w_new: f64::NAN, w_total: f64::NAN, stable }];
        let decision = match outcome.updated {
            Some(upd) => {
                self.models[0] = upd;
                Decision::Updated(0)
            }
            None => Decision::Rejected,
        };
        self.batch_count += 1;
        Ok(StepReport { decision, scores, candidates: alloc::vec![0], weights: Vec::new() })
    }

    /// Predict with the model that owns the pseudo-input nearest to `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if self.models.is_empty() {
            return Err(Error::State("cannot predict with an empty ensemble".into()));
        }
        check_dim(self.dim(), x.len())?;
        let j = self.nearest_model(x);
        let (mean, variance) = self.models[j].predict_point(x)?;
        Ok(Prediction { mean, variance, model_index: j })
    }

    /// Index of the model holding the globally nearest pseudo-input; ties go
    /// to the lower model index, then the lower pseudo-input index.
    pub fn nearest_model(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for (j, m) in self.models.iter().enumerate() {
            let z = m.z();
            for r in 0..z.nrows() {
                let d: f64 = x.iter().enumerate().map(|(c, v)| (z[(r, c)] - v) * (z[(r, c)] - v)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        best.1
    }

    /// Row-wise [`Ensemble::predict`].
    pub fn predict_batch(&self, xs: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if self.models.is_empty() {
            return Err(Error::State("cannot predict with an empty ensemble".into()));
        }
        check_dim(self.dim(), xs.ncols())?;
        let owners: Vec<usize> =
            (0..xs.nrows()).map(|i| self.nearest_model(xs.row(i).transpose().as_slice())).collect();
        let mut out = alloc::vec![Prediction { mean: 0.0, variance: 0.0, model_index: 0 }; xs.nrows()];
        for j in 0..self.models.len() {
            let rows: Vec<usize> = (0..xs.nrows()).filter(|&i| owners[i] == j).collect();
            if rows.is_empty() {
                continue;
            }
            let sub = DMatrix::from_fn(rows.len(), xs.ncols(), |i, c| xs[(rows[i], c)]);
            let (mean, var) = self.models[j].predict_marginal(&sub)?;
            for (k, &i) in rows.iter().enumerate() {
                out[i] = Prediction { mean: mean[k], variance: var[k], model_index: j };
            }
        }
        Ok(out)
    }

    /// Kernel-weighted average of local predictions.
    ///
    /// Weights are each model's kernel evaluated between `x` and its centroid.
    /// Falls back to the nearest-centroid model if no model is selected or all
    /// selected weights vanish.
    pub fn baseline_predict_weighted(&self, x: &[f64], mode: WeightedMode) -> Result<(f64, f64)> {
        if self.models.is_empty() {
            return Err(Error::State("cannot predict with an empty ensemble".into()));
        }
        check_dim(self.dim(), x.len())?;
        let xv = DVector::from_column_slice(x);
        let centers: Vec<DVector<f64>> = self.models.iter().map(|m| m.center()).collect();
        let weights: Vec<f64> =
            self.models.iter().zip(&centers).map(|(m, c)| kernel_weight(m.hyper(), &xv, c)).collect();
        let mut by_distance: Vec<(f64, usize)> =
            centers.iter().enumerate().map(|(j, c)| (sq_dist(c, &xv), j)).collect();
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let selected: Vec<usize> = match mode {
            WeightedMode::Activated { w_gen } => (0..self.models.len()).filter(|&j| weights[j] > w_gen).collect(),
            WeightedMode::TopK(k) => by_distance.iter().take(k.max(1)).map(|&(_, j)| j).collect(),
        };
        let total: f64 = selected.iter().map(|&j| weights[j]).sum();
        if selected.is_empty() || !(total > 0.0) {
            return self.models[by_distance[0].1].predict_point(x);
        }
        let (mut mean, mut var) = (0.0, 0.0);
        for &j in &selected {
            let (m, v) = self.models[j].predict_point(x)?;
            mean += weights[j] * m;
            var += weights[j] * v;
        }
        Ok((mean / total, var / total))
    }
}
