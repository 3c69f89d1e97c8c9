//! CSV ingestion, batching and normalization.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wgpr_core::Batch;

use crate::error::{io_err, Error, Result};

/// Rows of named features and one target, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<String>,
    pub target: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(features: Vec<String>, target: String, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.ncols() != features.len() || x.nrows() != y.len() {
            return Err(Error::Data("feature names, inputs and targets disagree in size".into()));
        }
        Ok(Self { features, target, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(idx.len(), self.dim(), |i, c| self.x[(idx[i], c)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]);
        Dataset { features: self.features.clone(), target: self.target.clone(), x, y }
    }

    /// Consecutive batches of `size` rows; the last one may be shorter.
    pub fn batches(&self, size: usize) -> Result<Vec<Batch>> {
        if size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.len() {
            let n = size.min(self.len() - start);
            let idx: Vec<usize> = (start..start + n).collect();
            let part = self.rows(&idx);
            out.push(Batch::new(part.x, part.y)?);
            start += n;
        }
        Ok(out)
    }

    /// First `train_fraction` of the rows for training, the rest for testing.
    pub fn split_chronological(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        let n_train = train_count(self.len(), train_fraction)?;
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        Ok((self.rows(&train), self.rows(&test)))
    }

    /// Seeded random test rows; both parts keep file order.
    pub fn split_shuffled(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n_train = train_count(self.len(), train_fraction)?;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.rows(&train), self.rows(&test)))
    }
}

fn train_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("train fraction must lie in (0, 1]".into()));
    }
    Ok(((n as f64 * fraction).round() as usize).clamp(1, n))
}

/// Z-scores computed from one batch and applied to everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Normalizer {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (x_mean, x_std) = (0..x.ncols()).map(|c| mean_std(x.column(c).iter().copied())).unzip();
        let (y_mean, y_std) = mean_std(y.iter().copied());
        Self { x_mean, x_std, y_mean, y_std }
    }

    pub fn inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| (x[(i, c)] - self.x_mean[c]) / self.x_std[c])
    }

    pub fn apply(&self, d: &Dataset) -> Dataset {
        let y = d.y.map(|v| (v - self.y_mean) / self.y_std);
        Dataset { x: self.inputs(&d.x), y, ..d.clone() }
    }

    /// Map a normalized predictive back to target units.
    pub fn restore(&self, mean: f64, variance: f64) -> (f64, f64) {
        (mean * self.y_std + self.y_mean, variance * self.y_std * self.y_std)
    }
}

pub fn read_csv(path: &Path, target: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_csv(file, target)
}

/// Parse a headed CSV; every column other than `target` is a feature.
pub fn parse_csv<R: Read>(reader: R, target: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv { line: 1, column: None, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let t = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Data(format!("no target column named {target:?}")))?;
    let features: Vec<String> = header.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, h)| h.clone()).collect();
    if features.is_empty() {
        return Err(Error::Data("need at least one feature column".into()));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            column: None,
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (i, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                line,
                column: Some(header[i].clone()),
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv { line, column: Some(header[i].clone()), msg: "non-finite value".into() });
            }
            if i == t {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let x = DMatrix::from_row_slice(ys.len(), features.len(), &xs);
    Dataset::new(features, target.to_string(), x, DVector::from_vec(ys))
}

pub fn write_csv(path: &Path, d: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(&mut w, d).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Values are written in shortest round-trip form.
pub fn write_csv_to<W: Write>(w: &mut W, d: &Dataset) -> std::io::Result<()> {
    let mut header = d.features.clone();
    header.push(d.target.clone());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..d.len() {
        for c in 0..d.dim() {
            write!(w, "{:?},", d.x[(i, c)])?;
        }
        writeln!(w, "{:?}", d.y[i])?;
    }
    Ok(())
}
