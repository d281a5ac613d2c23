//! Labeled blocks of output features.

use ndarray::{Array2, ArrayView1};

use crate::error::{shape_err, Result};

/// A `B x d` block of embeddings with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(rows: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(shape_err(format!(
                "{} embedding rows but {} labels",
                rows.nrows(),
                labels.len()
            )));
        }
        Ok(Self { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_dist(a, b).sqrt()
}
