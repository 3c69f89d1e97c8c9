//! Two-regime synthetic data: independent GP prior draws on either side of a
//! split point, observed with Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use wgpr_core::kernel::k_matrix;
use wgpr_core::linalg::{Factor, JitterPolicy};
use wgpr_core::Hyperparams;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Generating hyperparameters of one regime; `sigma_n` may be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub sigma_f: f64,
    pub lengthscale: f64,
    pub sigma_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_points: usize,
    pub lo: f64,
    pub hi: f64,
    pub split: f64,
    pub left: Regime,
    pub right: Regime,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_points: 1250,
            lo: 0.0,
            hi: 300.0,
            split: 150.0,
            left: Regime { sigma_f: 1.0, lengthscale: 10.0, sigma_n: 0.1 },
            right: Regime { sigma_f: 2.0, lengthscale: 6.0, sigma_n: 0.2 },
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Read the `[synth]` table of a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let v = table.get("synth").cloned().ok_or_else(|| Error::Config("no [synth] table".into()))?;
        v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }
}

fn draw(r: &Regime, x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let h = Hyperparams::new(r.sigma_f, vec![r.lengthscale], 1.0)?;
    let k = k_matrix(&h, x, x)?;
    let f = Factor::new(&k, h.signal_variance(), JitterPolicy::Kernel)?;
    let e = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Ok(f.l() * e + noise * r.sigma_n)
}

/// Evenly spaced inputs on `[lo, hi]`, in increasing order.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_points < 2 || !(cfg.hi > cfg.lo) {
        return Err(Error::Config("need at least two points on a non-empty domain".into()));
    }
    for r in [&cfg.left, &cfg.right] {
        if !(r.sigma_f > 0.0 && r.lengthscale > 0.0 && r.sigma_n >= 0.0) {
            return Err(Error::Config("regime hyperparameters must be positive".into()));
        }
    }
    let step = (cfg.hi - cfg.lo) / (cfg.n_points - 1) as f64;
    let xs: Vec<f64> = (0..cfg.n_points).map(|i| cfg.lo + step * i as f64).collect();
    let n_left = xs.iter().filter(|&&v| v < cfg.split).count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let left = draw(&cfg.left, &DMatrix::from_column_slice(n_left, 1, &xs[..n_left]), &mut rng)?;
    let right = draw(&cfg.right, &DMatrix::from_column_slice(xs.len() - n_left, 1, &xs[n_left..]), &mut rng)?;
    let y = DVector::from_iterator(xs.len(), left.iter().chain(right.iter()).copied());
    Dataset::new(vec!["x".into()], "y".into(), DMatrix::from_column_slice(xs.len(), 1, &xs), y)
}
