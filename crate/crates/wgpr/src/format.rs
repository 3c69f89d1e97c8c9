//! Plain-text records for models and ensembles.
//!
//! One `key value...` pair per line, matrices row-major on a single line,
//! floats in shortest round-trip form so a save/load cycle is lossless.
//!
//! ```text
//! wgpr-model-v1
//! dim 1
//! pseudo_points 2
//! sigma_f 1.0
//! lengthscales 0.5
//! ...
//! end
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use wgpr_core::{Ensemble, EnsembleConfig, Hyperparams, OptimizeConfig, SparseGP};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};

pub const MODEL_TAG: &str = "wgpr-model-v1";
pub const ENSEMBLE_TAG: &str = "wgpr-ensemble-v1";

fn floats<'a>(it: impl IntoIterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in it.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

fn row_major(m: &DMatrix<f64>) -> String {
    floats(m.transpose().iter())
}

pub fn write_model(out: &mut String, gp: &SparseGP) {
    let h = gp.hyper();
    let _ = writeln!(out, "{MODEL_TAG}");
    let _ = writeln!(out, "dim {}", gp.dim());
    let _ = writeln!(out, "pseudo_points {}", gp.n_pseudo());
    let _ = writeln!(out, "sigma_f {:?}", h.sigma_f());
    let _ = writeln!(out, "lengthscales {}", floats(h.lengthscales()));
    let _ = writeln!(out, "sigma_n {:?}", h.sigma_n());
    let _ = writeln!(out, "n_seen {}", gp.n_seen());
    let _ = writeln!(out, "was_streamed {}", gp.was_streamed());
    let _ = writeln!(out, "z {}", row_major(gp.z()));
    let _ = writeln!(out, "site_precision {}", row_major(gp.site_precision()));
    let _ = writeln!(out, "site_shift {}", floats(gp.site_shift().iter()));
    let _ = writeln!(out, "mu_z {}", floats(gp.mu_z().iter()));
    let _ = writeln!(out, "s_z {}", row_major(gp.s_z()));
    let _ = writeln!(out, "end");
}

/// Line cursor with 1-based line numbers for error messages.
pub struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { lines: text.lines().collect(), pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { line: self.pos.max(1), msg: msg.into() }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        while self.pos < self.lines.len() {
            let l = self.lines[self.pos].trim();
            self.pos += 1;
            if !l.is_empty() && !l.starts_with('#') {
                return Ok(l);
            }
        }
        Err(Error::Format { line: self.pos + 1, msg: "unexpected end of input".into() })
    }

    fn expect_tag(&mut self, tag: &str) -> Result<()> {
        let l = self.next_line()?;
        if l != tag {
            return Err(self.err(format!("expected {tag:?}, found {l:?}")));
        }
        Ok(())
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next_line()?;
        let (k, rest) = l.split_once(' ').unwrap_or((l, ""));
        if k != key {
            return Err(self.err(format!("expected field {key:?}, found {k:?}")));
        }
        Ok(rest.trim())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(format!("bad value for {key}: {v:?}")))
    }

    fn floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v = self.field(key)?;
        let out: Vec<f64> = v
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(format!("bad number in {key}")))?;
        if out.len() != n {
            return Err(self.err(format!("{key} has {} values, expected {n}", out.len())));
        }
        Ok(out)
    }
}

pub fn read_model(r: &mut Reader<'_>) -> Result<SparseGP> {
    r.expect_tag(MODEL_TAG)?;
    let d: usize = r.parse("dim")?;
    let m: usize = r.parse("pseudo_points")?;
    let sf: f64 = r.parse("sigma_f")?;
    let ls = r.floats("lengthscales", d)?;
    let sn: f64 = r.parse("sigma_n")?;
    let n_seen: usize = r.parse("n_seen")?;
    let streamed: bool = r.parse("was_streamed")?;
    let z = DMatrix::from_row_slice(m, d, &r.floats("z", m * d)?);
    let p = DMatrix::from_row_slice(m, m, &r.floats("site_precision", m * m)?);
    let shift = DVector::from_vec(r.floats("site_shift", m)?);
    let mu = DVector::from_vec(r.floats("mu_z", m)?);
    let s = DMatrix::from_row_slice(m, m, &r.floats("s_z", m * m)?);
    r.expect_tag("end")?;
    let line = r.pos;
    let h = Hyperparams::new(sf, ls, sn)?;
    let gp = SparseGP::from_site(h, z, p, shift, n_seen, streamed)?;
    // The moments are derived data; a mismatch means a damaged record.
    let tol = 1e-8 * (1.0 + s.amax() + mu.amax());
    if (gp.mu_z() - &mu).amax() > tol || (gp.s_z() - &s).amax() > tol {
        return Err(Error::Format { line, msg: "stored moments disagree with the site parameters".into() });
    }
    Ok(gp)
}

pub fn model_to_string(gp: &SparseGP) -> String {
    let mut s = String::new();
    write_model(&mut s, gp);
    s
}

pub fn model_from_str(text: &str) -> Result<SparseGP> {
    read_model(&mut Reader::new(text))
}

/// What a stored ensemble needs besides its models.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHeader {
    pub strategy: String,
    /// Baseline weight threshold, used for weighted prediction.
    pub w_gen: f64,
    /// Baseline prediction averages the `k` nearest centers instead of the
    /// activated models.
    pub top_k: Option<usize>,
    pub normalizer: Option<Normalizer>,
}

fn write_optimizer(out: &mut String, key: &str, o: &OptimizeConfig) {
    let _ = writeln!(out, "{key} {} {:?} {:?} {}", o.max_iters, o.grad_tol, o.step_tol, o.memory);
}

fn read_optimizer(r: &mut Reader<'_>, key: &str) -> Result<OptimizeConfig> {
    let v = r.field(key)?;
    let t: Vec<&str> = v.split_whitespace().collect();
    let bad = || Error::Format { line: r.pos, msg: format!("bad optimizer settings in {key}") };
    if t.len() != 4 {
        return Err(bad());
    }
    Ok(OptimizeConfig {
        max_iters: t[0].parse().map_err(|_| bad())?,
        grad_tol: t[1].parse().map_err(|_| bad())?,
        step_tol: t[2].parse().map_err(|_| bad())?,
        memory: t[3].parse().map_err(|_| bad())?,
    })
}

pub fn ensemble_to_string(ens: &Ensemble, header: &EnsembleHeader) -> String {
    let c = ens.config();
    let mut out = String::new();
    let _ = writeln!(out, "{ENSEMBLE_TAG}");
    let _ = writeln!(out, "epsilon {:?}", c.epsilon);
    let _ = writeln!(out, "j_hat {}", c.j_hat);
    let _ = writeln!(out, "batch_count {}", ens.batch_count());
    let _ = writeln!(out, "seed {}", c.seed);
    let _ = writeln!(out, "pseudo_points {}", c.pseudo_points);
    let _ = writeln!(out, "mean_cap_factor {:?}", c.mean_cap_factor);
    let _ = writeln!(out, "mean_cap {:?}", ens.mean_cap());
    let _ = writeln!(out, "refresh_fraction {:?}", c.refresh_fraction);
    write_optimizer(&mut out, "optimizer", &c.optimizer);
    write_optimizer(&mut out, "stream_optimizer", &c.stream_optimizer);
    let _ = writeln!(out, "strategy {}", header.strategy);
    let _ = writeln!(out, "w_gen {:?}", header.w_gen);
    match header.top_k {
        Some(k) => writeln!(out, "top_k {k}"),
        None => writeln!(out, "top_k none"),
    }
    .ok();
    match &header.normalizer {
        Some(n) => {
            let _ = writeln!(out, "normalize true");
            let _ = writeln!(out, "x_mean {}", floats(&n.x_mean));
            let _ = writeln!(out, "x_std {}", floats(&n.x_std));
            let _ = writeln!(out, "y_mean {:?}", n.y_mean);
            let _ = writeln!(out, "y_std {:?}", n.y_std);
        }
        None => {
            let _ = writeln!(out, "normalize false");
        }
    }
    let _ = writeln!(out, "models {}", ens.len());
    for m in ens.models() {
        write_model(&mut out, m);
    }
    out
}

pub fn ensemble_from_str(text: &str) -> Result<(Ensemble, EnsembleHeader)> {
    let mut r = Reader::new(text);
    r.expect_tag(ENSEMBLE_TAG)?;
    let epsilon: f64 = r.parse("epsilon")?;
    let j_hat: usize = r.parse("j_hat")?;
    let batch_count: usize = r.parse("batch_count")?;
    let seed: u64 = r.parse("seed")?;
    let pseudo_points: usize = r.parse("pseudo_points")?;
    let mean_cap_factor: f64 = r.parse("mean_cap_factor")?;
    let mean_cap: f64 = r.parse("mean_cap")?;
    let refresh_fraction: f64 = r.parse("refresh_fraction")?;
    let optimizer = read_optimizer(&mut r, "optimizer")?;
    let stream_optimizer = read_optimizer(&mut r, "stream_optimizer")?;
    let strategy: String = r.parse("strategy")?;
    let w_gen: f64 = r.parse("w_gen")?;
    let top_k: Option<usize> = match r.parse::<String>("top_k")?.as_str() {
        "none" => None,
        k => Some(k.parse().map_err(|_| r.err("top_k must be `none` or a count"))?),
    };
    let normalizer = if r.parse::<bool>("normalize")? {
        let x_mean: Vec<f64> = r.field("x_mean")?.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let x_std = r.floats("x_std", x_mean.len())?;
        Some(Normalizer { x_mean, x_std, y_mean: r.parse("y_mean")?, y_std: r.parse("y_std")? })
    } else {
        None
    };
    let n: usize = r.parse("models")?;
    let mut models = Vec::with_capacity(n);
    for _ in 0..n {
        models.push(read_model(&mut r)?);
    }
    let config = EnsembleConfig { pseudo_points, epsilon, j_hat, optimizer, stream_optimizer, mean_cap_factor, refresh_fraction, seed };
    let ens = Ensemble::from_parts(models, batch_count, config, mean_cap)?;
    Ok((ens, EnsembleHeader { strategy, w_gen, top_k, normalizer }))
}
