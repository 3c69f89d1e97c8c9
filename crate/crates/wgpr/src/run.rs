//! Streaming training runs, evaluation metrics and threshold sweeps.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wgpr_core::ensemble::CandidateScore;
use wgpr_core::{Decision, Ensemble, EnsembleConfig, OptimizeConfig, StepReport, WeightedMode};

use crate::dataset::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::format::EnsembleHeader;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Wasserstein splitting.
    Wgpr,
    /// Split on kernel-weight distance between batch and model centers.
    DistanceBaseline,
    /// One model absorbing every batch.
    SingleStream,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Wgpr => "wgpr",
            Strategy::DistanceBaseline => "distance-baseline",
            Strategy::SingleStream => "single-stream",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wgpr" => Ok(Strategy::Wgpr),
            "distance-baseline" => Ok(Strategy::DistanceBaseline),
            "single-stream" => Ok(Strategy::SingleStream),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Leading rows train, trailing rows test.
    Chronological,
    /// Seeded random test rows.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_size: usize,
    pub pseudo_points: usize,
    pub epsilon: f64,
    pub j_hat: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub target: String,
    pub normalize: bool,
    pub train_fraction: f64,
    pub split: SplitMode,
    /// Baseline kernel-weight threshold for updates and for prediction.
    pub w_gen: f64,
    /// Baseline prediction over the `top_k` nearest centers; unset averages
    /// the models whose weight exceeds `w_gen`.
    pub top_k: Option<usize>,
    pub max_iters: usize,
    pub stream_max_iters: usize,
    pub mean_cap_factor: f64,
    /// Share of each stream update's starting pseudo-inputs taken from the batch.
    pub refresh_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            pseudo_points: 50,
            epsilon: 1.0,
            j_hat: 5,
            seed: 0,
            strategy: Strategy::Wgpr,
            target: "y".into(),
            normalize: false,
            train_fraction: 0.8,
            split: SplitMode::Chronological,
            w_gen: 0.5,
            top_k: None,
            max_iters: 200,
            stream_max_iters: 200,
            mean_cap_factor: wgpr_core::ensemble::DEFAULT_MEAN_CAP_FACTOR,
            refresh_fraction: wgpr_core::ensemble::DEFAULT_REFRESH_FRACTION,
        }
    }
}

impl RunConfig {
    /// Parse a TOML document, optionally taking one named table from it.
    pub fn from_toml(text: &str, profile: Option<&str>) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let value = match profile {
            Some(p) => table.get(p).cloned().ok_or_else(|| Error::Config(format!("no table [{p}]")))?,
            None => toml::Value::Table(table),
        };
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.pseudo_points == 0 || self.j_hat == 0 {
            return Err(Error::Config("batch_size, pseudo_points and j_hat must be positive".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.refresh_fraction) {
            return Err(Error::Config("refresh_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            pseudo_points: self.pseudo_points,
            epsilon: self.epsilon,
            j_hat: self.j_hat,
            optimizer: OptimizeConfig::default().with_max_iters(self.max_iters),
            stream_optimizer: OptimizeConfig::default().with_max_iters(self.stream_max_iters),
            mean_cap_factor: self.mean_cap_factor,
            refresh_fraction: self.refresh_fraction,
            seed: self.seed,
        }
    }

    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset)> {
        match self.split {
            SplitMode::Chronological => data.split_chronological(self.train_fraction),
            SplitMode::Shuffled => data.split_shuffled(self.train_fraction, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model: usize,
    pub w_old: Option<f64>,
    pub w_new: Option<f64>,
    pub w_total: Option<f64>,
    pub stable: bool,
}

/// One processed batch, as written to the result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub batch: usize,
    pub decision: String,
    pub model: Option<usize>,
    pub n_models: usize,
    pub candidates: Vec<usize>,
    pub scores: Vec<ScoreRecord>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl DecisionRecord {
    fn new(batch: usize, rep: &StepReport, n_models: usize) -> Self {
        let (decision, model) = match rep.decision {
            Decision::Initialized => ("initialized", Some(0)),
            Decision::Updated(j) => ("updated", Some(j)),
            Decision::Split(j) => ("split", Some(j)),
            Decision::Rejected => ("rejected", None),
        };
        let scores = rep
            .scores
            .iter()
            .map(|s: &CandidateScore| ScoreRecord {
                model: s.index,
                w_old: finite(s.w_old),
                w_new: finite(s.w_new),
                w_total: finite(s.w_total),
                stable: s.stable,
            })
            .collect();
        Self { batch, decision: decision.into(), model, n_models, candidates: rep.candidates.clone(), scores }
    }

    fn initialized() -> Self {
        Self {
            batch: 0,
            decision: "initialized".into(),
            model: Some(0),
            n_models: 1,
            candidates: Vec::new(),
            scores: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: Strategy,
    pub rmse: f64,
    pub smse: f64,
    pub mean_variance: f64,
    pub n_models: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_seconds: f64,
    pub training_frequency: f64,
    /// Test RMSE after each batch.
    pub rmse_curve: Vec<f64>,
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPrediction {
    pub x: Vec<f64>,
    pub y: f64,
    pub mean: f64,
    pub variance: f64,
    /// Nearest-model index; `None` for weighted predictions.
    pub model: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub smse: f64,
    pub mean_variance: f64,
    pub predictions: Vec<PointPrediction>,
}

/// A trained ensemble with what is needed to predict in target units.
#[derive(Debug, Clone)]
pub struct Trained {
    pub ensemble: Ensemble,
    pub header: EnsembleHeader,
}

impl Trained {
    pub fn strategy(&self) -> Result<Strategy> {
        Strategy::parse(&self.header.strategy)
    }

    /// Predictive mean, variance and owning model at raw inputs `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<(f64, f64, Option<usize>)>> {
        let xn = match &self.header.normalizer {
            Some(n) => n.inputs(x),
            None => x.clone(),
        };
        let weighted = self.strategy()? == Strategy::DistanceBaseline;
        let raw: Vec<(f64, f64, Option<usize>)> = if weighted {
            let mode = match self.header.top_k {
                Some(k) => WeightedMode::TopK(k),
                None => WeightedMode::Activated { w_gen: self.header.w_gen },
            };
            (0..xn.nrows())
                .map(|i| {
                    let row: Vec<f64> = xn.row(i).iter().copied().collect();
                    self.ensemble.baseline_predict_weighted(&row, mode).map(|(m, v)| (m, v, None))
                })
                .collect::<wgpr_core::Result<_>>()?
        } else {
            self.ensemble.predict_batch(&xn)?.into_iter().map(|p| (p.mean, p.variance, Some(p.model_index))).collect()
        };
        Ok(match &self.header.normalizer {
            Some(n) => raw
                .into_iter()
                .map(|(m, v, j)| {
                    let (m, v) = n.restore(m, v);
                    (m, v, j)
                })
                .collect(),
            None => raw,
        })
    }

    pub fn evaluate(&self, test: &Dataset) -> Result<Metrics> {
        if test.dim() != self.ensemble.dim() {
            return Err(Error::Data(format!(
                "model expects {} features, data has {}",
                self.ensemble.dim(),
                test.dim()
            )));
        }
        if test.is_empty() {
            return Err(Error::Data("no test rows".into()));
        }
        let preds = self.predict(&test.x)?;
        let predictions: Vec<PointPrediction> = preds
            .iter()
            .enumerate()
            .map(|(i, &(mean, variance, model))| PointPrediction {
                x: test.x.row(i).iter().copied().collect(),
                y: test.y[i],
                mean,
                variance,
                model,
            })
            .collect();
        Ok(metrics(predictions))
    }
}

/// RMSE, SMSE (MSE over the population variance of the targets) and mean
/// predictive variance.
pub fn metrics(predictions: Vec<PointPrediction>) -> Metrics {
    let n = predictions.len() as f64;
    let mse = predictions.iter().map(|p| (p.y - p.mean).powi(2)).sum::<f64>() / n;
    let y_mean = predictions.iter().map(|p| p.y).sum::<f64>() / n;
    let y_var = predictions.iter().map(|p| (p.y - y_mean).powi(2)).sum::<f64>() / n;
    let mean_variance = predictions.iter().map(|p| p.variance).sum::<f64>() / n;
    Metrics { rmse: mse.sqrt(), smse: mse / y_var, mean_variance, predictions }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trained: Trained,
    pub result: RunResult,
    pub metrics: Metrics,
}

/// Split, stream the training rows in order, and evaluate on the rest.
pub fn run(cfg: &RunConfig, data: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let (train, test) = cfg.split(data)?;
    if test.is_empty() {
        return Err(Error::Data("train fraction leaves no test rows".into()));
    }
    let normalizer = cfg.normalize.then(|| {
        let n = cfg.batch_size.min(train.len());
        let first = train.rows(&(0..n).collect::<Vec<_>>());
        Normalizer::fit(&first.x, &first.y)
    });
    let train_n = match &normalizer {
        Some(n) => n.apply(&train),
        None => train.clone(),
    };
    let batches = train_n.batches(cfg.batch_size)?;
    let header = EnsembleHeader { strategy: cfg.strategy.name().into(), w_gen: cfg.w_gen, top_k: cfg.top_k, normalizer };

    let mut seconds = 0.0;
    let t = Instant::now();
    let ensemble = Ensemble::init(&batches[0], cfg.ensemble_config())?;
    seconds += t.elapsed().as_secs_f64();
    let mut trained = Trained { ensemble, header };
    let mut decisions = vec![DecisionRecord::initialized()];
    let mut curve = vec![trained.evaluate(&test)?.rmse];

    for (k, b) in batches.iter().enumerate().skip(1) {
        let t = Instant::now();
        let rep = match cfg.strategy {
            Strategy::Wgpr => trained.ensemble.train_step(b)?,
            Strategy::DistanceBaseline => trained.ensemble.baseline_train_step(b, cfg.w_gen)?,
            Strategy::SingleStream => trained.ensemble.single_stream_step(b)?,
        };
        seconds += t.elapsed().as_secs_f64();
        decisions.push(DecisionRecord::new(k, &rep, trained.ensemble.len()));
        curve.push(trained.evaluate(&test)?.rmse);
    }

    let m = trained.evaluate(&test)?;
    let result = RunResult {
        strategy: cfg.strategy,
        rmse: m.rmse,
        smse: m.smse,
        mean_variance: m.mean_variance,
        n_models: trained.ensemble.len(),
        n_train: train.len(),
        n_test: test.len(),
        train_seconds: seconds,
        training_frequency: train.len() as f64 / seconds,
        rmse_curve: curve,
        decisions,
    };
    Ok(RunOutput { trained, result, metrics: m })
}

/// The result document without the timing fields, for reproducibility checks.
pub fn without_timing(result: &RunResult) -> serde_json::Value {
    let mut v = serde_json::to_value(result).expect("results serialize");
    if let Some(o) = v.as_object_mut() {
        o.remove("train_seconds");
        o.remove("training_frequency");
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: Strategy,
    /// `epsilon` for WGPR, `w_gen` for the baseline.
    pub threshold: f64,
    pub n_models: Option<usize>,
    pub rmse: Option<f64>,
    pub smse: Option<f64>,
    pub training_frequency: Option<f64>,
    pub error: Option<String>,
}

/// Run every threshold in the grid; failed cells are recorded, not fatal.
pub fn compare(base: &RunConfig, data: &Dataset, epsilons: &[f64], w_gens: &[f64]) -> Vec<CompareRow> {
    let cells = epsilons
        .iter()
        .map(|&e| (Strategy::Wgpr, e))
        .chain(w_gens.iter().map(|&w| (Strategy::DistanceBaseline, w)));
    cells
        .map(|(strategy, threshold)| {
            let mut cfg = base.clone();
            cfg.strategy = strategy;
            match strategy {
                Strategy::DistanceBaseline => cfg.w_gen = threshold,
                _ => cfg.epsilon = threshold,
            }
            match run(&cfg, data) {
                Ok(out) => CompareRow {
                    strategy,
                    threshold,
                    n_models: Some(out.result.n_models),
                    rmse: Some(out.result.rmse),
                    smse: Some(out.result.smse),
                    training_frequency: Some(out.result.training_frequency),
                    error: None,
                },
                Err(e) => CompareRow {
                    strategy,
                    threshold,
                    n_models: None,
                    rmse: None,
                    smse: None,
                    training_frequency: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
