use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::embedding::{sq_dist, EmbeddingBatch};
use crate::error::{config_err, shape_err, CirError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Average over every mined triplet.
    #[default]
    MeanAll,
    /// Average over the triplets with a positive hinge.
    MeanNonzero,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::MeanAll => "mean_all",
            Reduction::MeanNonzero => "mean_nonzero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean_all" => Ok(Reduction::MeanAll),
            "mean_nonzero" => Ok(Reduction::MeanNonzero),
            other => Err(config_err(format!("unknown reduction `{other}`"))),
        }
    }
}

/// Distance used inside the hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletDistance {
    #[default]
    Squared,
    /// Plain Euclidean distance; ablation only.
    Euclidean,
}

impl TripletDistance {
    pub fn name(self) -> &'static str {
        match self {
            TripletDistance::Squared => "squared",
            TripletDistance::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(TripletDistance::Squared),
            "euclidean" => Ok(TripletDistance::Euclidean),
            other => Err(config_err(format!("unknown triplet distance `{other}`"))),
        }
    }

    fn of(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            TripletDistance::Squared => sq_dist(a, b),
            TripletDistance::Euclidean => sq_dist(a, b).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
    pub reduction: Reduction,
    pub distance: TripletDistance,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            reduction: Reduction::MeanAll,
            distance: TripletDistance::Squared,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin >= 0.0 && self.margin.is_finite() {
            Ok(())
        } else {
            Err(config_err(format!("margin must be non-negative, got {}", self.margin)))
        }
    }
}

/// `(anchor, positive, negative)` row indices into one batch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletIndexSet {
    triplets: Vec<(usize, usize, usize)>,
}

impl TripletIndexSet {
    /// Check every triple against `labels`.
    pub fn new(triplets: Vec<(usize, usize, usize)>, labels: &[usize]) -> Result<Self> {
        for &(a, p, n) in &triplets {
            if a >= labels.len() || p >= labels.len() || n >= labels.len() {
                return Err(CirError::Index(format!("triplet ({a}, {p}, {n}) out of range")));
            }
            if a == p || labels[a] != labels[p] || labels[n] == labels[a] {
                return Err(CirError::Input(format!("invalid triplet ({a}, {p}, {n})")));
            }
        }
        Ok(Self { triplets })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize, usize)> {
        self.triplets.iter()
    }

    /// Rows that appear in the anchor slot.
    pub fn anchor_mask(&self, rows: usize) -> Vec<bool> {
        let mut mask = vec![false; rows];
        for &(a, _, _) in &self.triplets {
            mask[a] = true;
        }
        mask
    }
}

/// `max(0, margin + |a - p|^2 - |a - n|^2)`.
pub fn triplet_loss(a: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>, margin: f64) -> Result<f64> {
    Ok(triplet_loss_with_grads(a, p, n, margin, TripletDistance::Squared)?.0)
}

/// Hinge value and its gradients with respect to `(a, p, n)`. The hinge
/// contributes gradient only when its argument is strictly positive.
pub fn triplet_loss_with_grads(
    a: ArrayView1<f64>,
    p: ArrayView1<f64>,
    n: ArrayView1<f64>,
    margin: f64,
    distance: TripletDistance,
) -> Result<(f64, [Array1<f64>; 3])> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(shape_err("triplet members differ in dimension"));
    }
    let d_ap = distance.of(a, p);
    let d_an = distance.of(a, n);
    let arg = margin + d_ap - d_an;
    let zero = Array1::zeros(a.len());
    if arg <= 0.0 {
        return Ok((0.0, [zero.clone(), zero.clone(), zero]));
    }
    let (ga_p, ga_n) = match distance {
        // d|a-b|^2/da = 2(a-b)
        TripletDistance::Squared => ((&a - &p) * 2.0, (&a - &n) * 2.0),
        TripletDistance::Euclidean => (unit_or_zero(&a - &p, d_ap), unit_or_zero(&a - &n, d_an)),
    };
    let grad_a = &ga_p - &ga_n;
    let grad_p = -&ga_p;
    Ok((arg, [grad_a, grad_p, ga_n]))
}

fn unit_or_zero(v: Array1<f64>, norm: f64) -> Array1<f64> {
    if norm > 0.0 {
        v / norm
    } else {
        Array1::zeros(v.len())
    }
}

/// Every valid `(a, p, n)`: `a != p` with equal labels, `n` with a different label.
///
/// For `P` classes with `K` samples each this yields `P*K*(K-1)*(P-1)*K` triples.
pub fn batch_all_triplets(labels: &[usize]) -> TripletIndexSet {
    let mut triplets = Vec::new();
    for (a, &la) in labels.iter().enumerate() {
        for (p, &lp) in labels.iter().enumerate() {
            if p == a || lp != la {
                continue;
            }
            for (n, &ln) in labels.iter().enumerate() {
                if ln != la {
                    triplets.push((a, p, n));
                }
            }
        }
    }
    TripletIndexSet { triplets }
}

/// Reduced loss over a triplet set plus gradients for both loss slots.
#[derive(Debug, Clone)]
pub struct TripletBatchLoss {
    pub loss: f64,
    pub triplets: usize,
    pub active: usize,
    /// Gradient w.r.t. the rows used in the anchor slot.
    pub grad_anchor_slot: Array2<f64>,
    /// Gradient w.r.t. the rows used in the positive and negative slots.
    pub grad_other_slot: Array2<f64>,
}

impl TripletBatchLoss {
    /// Gradient w.r.t. the raw embeddings, given the per-row factor that maps
    /// each slot's (possibly blended) rows back onto the raw ones.
    pub fn raw_gradient(&self, anchor_scale: &[f64], other_scale: &[f64]) -> Array2<f64> {
        let mut grad = self.grad_anchor_slot.clone();
        for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
            row *= anchor_scale[i];
            row.scaled_add(other_scale[i], &self.grad_other_slot.row(i));
        }
        grad
    }
}

/// Sum the hinge over `set`, reading anchors from `anchor_rows` and positives
/// and negatives from `other_rows`, then reduce per `cfg`.
pub fn triplet_set_loss(
    anchor_rows: &Array2<f64>,
    other_rows: &Array2<f64>,
    set: &TripletIndexSet,
    cfg: &TripletConfig,
) -> Result<TripletBatchLoss> {
    cfg.validate()?;
    if anchor_rows.dim() != other_rows.dim() {
        return Err(shape_err(format!(
            "anchor rows {:?} and other rows {:?} differ",
            anchor_rows.dim(),
            other_rows.dim()
        )));
    }
    let (rows, _) = anchor_rows.dim();
    if set.iter().any(|&(a, p, n)| a >= rows || p >= rows || n >= rows) {
        return Err(CirError::Index("triplet index outside the batch".into()));
    }
    let mut out = TripletBatchLoss {
        loss: 0.0,
        triplets: set.len(),
        active: 0,
        grad_anchor_slot: Array2::zeros(anchor_rows.raw_dim()),
        grad_other_slot: Array2::zeros(anchor_rows.raw_dim()),
    };
    if set.is_empty() {
        return Ok(out);
    }

    // pairwise anchor-to-other distances cover every triplet term
    let mut dists = Array2::<f64>::zeros((rows, rows));
    for i in 0..rows {
        for j in 0..rows {
            dists[[i, j]] = cfg.distance.of(anchor_rows.row(i), other_rows.row(j));
        }
    }
    // coef[i][j]: signed multiplicity of the term dist(anchor_i, other_j) in the active sum
    let mut coef = Array2::<f64>::zeros((rows, rows));
    let mut total = 0.0;
    for &(a, p, n) in set.iter() {
        let arg = cfg.margin + dists[[a, p]] - dists[[a, n]];
        if arg > 0.0 {
            total += arg;
            out.active += 1;
            coef[[a, p]] += 1.0;
            coef[[a, n]] -= 1.0;
        }
    }
    let denom = match cfg.reduction {
        Reduction::MeanAll => set.len(),
        Reduction::MeanNonzero => out.active,
    };
    if out.active == 0 {
        return Ok(out);
    }
    let norm = 1.0 / denom as f64;
    out.loss = total * norm;

    // d dist(x, y)/dx = k(x, y) * (x - y), k = 2 for squared, 1/|x - y| for euclidean
    let kernel = match cfg.distance {
        TripletDistance::Squared => coef.mapv(|c| 2.0 * c * norm),
        TripletDistance::Euclidean => {
            ndarray::Zip::from(&coef)
                .and(&dists)
                .map_collect(|&c, &d| if d > 0.0 { c * norm / d } else { 0.0 })
        }
    };
    let row_sum = kernel.sum_axis(Axis(1));
    let col_sum = kernel.sum_axis(Axis(0));
    let k_other = kernel.dot(other_rows);
    let kt_anchor = kernel.t().dot(anchor_rows);
    for i in 0..rows {
        let ga = &anchor_rows.row(i) * row_sum[i] - k_other.row(i);
        out.grad_anchor_slot.row_mut(i).assign(&ga);
        let go = &other_rows.row(i) * col_sum[i] - kt_anchor.row(i);
        out.grad_other_slot.row_mut(i).assign(&go);
    }
    Ok(out)
}

/// Batch-all triplet loss with blended rows in the anchor slot and raw rows
/// in the positive and negative slots.
pub fn batch_all_triplet_loss(
    batch: &EmbeddingBatch,
    blended_anchors: &Array2<f64>,
    cfg: &TripletConfig,
) -> Result<TripletBatchLoss> {
    let set = batch_all_triplets(&batch.labels);
    triplet_set_loss(blended_anchors, &batch.rows, &set, cfg)
}
