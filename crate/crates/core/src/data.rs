use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};

/// A block of training observations: `n x d` inputs and `n` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Batch {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        if x.ncols() == 0 {
            return Err(invalid("inputs must have at least one column"));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(invalid("batch contains non-finite values"));
        }
        Ok(Self { x, y })
    }

    /// Convenience constructor for one-dimensional inputs.
    pub fn from_1d(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
        )
    }

    /// An empty batch of the given input dimension.
    pub fn empty(dim: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, dim.max(1)),
            y: DVector::zeros(0),
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
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

    /// Row-wise concatenation of two batches of equal dimension.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        check_dim(self.dim(), other.dim())?;
        let n = self.len() + other.len();
        let mut x = DMatrix::zeros(n, self.dim());
        x.rows_mut(0, self.len()).copy_from(&self.x);
        x.rows_mut(self.len(), other.len()).copy_from(&other.x);
        let y = DVector::from_iterator(n, self.y.iter().chain(other.y.iter()).copied());
        Ok(Batch { x, y })
    }

    /// Rows `start..start + len` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> Batch {
        Batch {
            x: self.x.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
        }
    }

    /// Arithmetic mean of the inputs.
    pub fn input_center(&self) -> DVector<f64> {
        row_mean(&self.x)
    }
}

pub(crate) fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Population standard deviation; zero for fewer than two values.
pub(crate) fn std_dev<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    libm::sqrt(var)
}
