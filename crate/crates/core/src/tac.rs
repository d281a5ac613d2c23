//! Table of average class embeddings.
//!
//! One row per training class, tracked with an exponential moving average of
//! the batch means of that class's raw embeddings. Rows are read as constants
//! by the losses; nothing backpropagates into the table.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingBatch;
use crate::error::{config_err, shape_err, CirError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    rows: Array2<f64>,
    momentum: f64,
}

impl ClassTable {
    /// Random `N(0, 1)` rows, deterministic per seed.
    pub fn random(class_count: usize, dim: usize, momentum: f64, seed: u64) -> Result<Self> {
        if class_count < 2 {
            return Err(config_err(format!(
                "class table needs at least 2 classes, got {class_count}"
            )));
        }
        if dim == 0 {
            return Err(config_err("class table dimension must be positive"));
        }
        check_momentum(momentum)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = Array2::from_shape_simple_fn((class_count, dim), || StandardNormal.sample(&mut rng));
        Ok(Self { rows, momentum })
    }

    /// Wrap explicit rows.
    pub fn from_rows(rows: Array2<f64>, momentum: f64) -> Result<Self> {
        if rows.nrows() < 2 || rows.ncols() == 0 {
            return Err(config_err(format!(
                "class table needs at least 2 rows and 1 column, got {:?}",
                rows.dim()
            )));
        }
        check_momentum(momentum)?;
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(CirError::Numeric("non-finite class table entry".into()));
        }
        Ok(Self { rows, momentum })
    }

    pub fn class_count(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn lookup(&self, class: usize) -> Result<Array1<f64>> {
        if class >= self.class_count() {
            return Err(CirError::Index(format!(
                "class {class} outside table of {} classes",
                self.class_count()
            )));
        }
        Ok(self.rows.row(class).to_owned())
    }

    /// Uniform draw from every class except `own_class`, consuming exactly one
    /// value from `rng`.
    pub fn sample_negative_class<R: Rng + ?Sized>(&self, own_class: usize, rng: &mut R) -> Result<usize> {
        let c = self.class_count();
        if own_class >= c {
            return Err(CirError::Index(format!("class {own_class} outside table of {c} classes")));
        }
        let draw = rng.random_range(0..c - 1);
        Ok(if draw >= own_class { draw + 1 } else { draw })
    }

    /// `row_c <- (1 - momentum) * row_c + momentum * mean_c` for each class in
    /// `means`; all other rows are left untouched.
    pub fn update(&mut self, means: &BTreeMap<usize, Array1<f64>>) -> Result<()> {
        for (&class, mean) in means {
            if class >= self.class_count() {
                return Err(CirError::Index(format!(
                    "class {class} outside table of {} classes",
                    self.class_count()
                )));
            }
            if mean.len() != self.dim() {
                return Err(shape_err(format!(
                    "class mean has dim {}, table has {}",
                    mean.len(),
                    self.dim()
                )));
            }
        }
        let keep = 1.0 - self.momentum;
        for (&class, mean) in means {
            let mut row = self.rows.row_mut(class);
            row.zip_mut_with(mean, |r, &m| *r = keep * *r + self.momentum * m);
        }
        Ok(())
    }

    /// Scale every row to unit L2 norm. Zero rows are left as they are.
    pub fn normalize_rows(&mut self) {
        for mut row in self.rows.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
}

fn check_momentum(momentum: f64) -> Result<()> {
    if (0.0..=1.0).contains(&momentum) {
        Ok(())
    } else {
        Err(config_err(format!("momentum must lie in [0, 1], got {momentum}")))
    }
}

/// Arithmetic mean of the rows of each class present in the batch.
pub fn class_means(batch: &EmbeddingBatch) -> BTreeMap<usize, Array1<f64>> {
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for (i, &label) in batch.labels.iter().enumerate() {
        let entry = sums
            .entry(label)
            .or_insert_with(|| (Array1::zeros(batch.dim()), 0));
        entry.0 += &batch.row(i);
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(label, (sum, n))| (label, sum / n as f64))
        .collect()
}
