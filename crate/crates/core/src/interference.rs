//! Class interference: blend an embedding toward the average embedding of a
//! randomly chosen wrong class, plus the Gaussian-noise control used to show
//! that the direction of the perturbation matters.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{dist, EmbeddingBatch};
use crate::error::{config_err, shape_err, CirError, Result};
use crate::tac::ClassTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterferenceMode {
    /// Blend only rows that serve as triplet anchors.
    #[default]
    AnchorOnly,
    /// Blend every row, and use the blended rows in every loss slot.
    AllSamples,
}

impl InterferenceMode {
    pub fn name(self) -> &'static str {
        match self {
            InterferenceMode::AnchorOnly => "anchor_only",
            InterferenceMode::AllSamples => "all_samples",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "anchor_only" => Ok(InterferenceMode::AnchorOnly),
            "all_samples" => Ok(InterferenceMode::AllSamples),
            other => Err(config_err(format!("unknown interference mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceConfig {
    pub lambda: f64,
    pub mode: InterferenceMode,
    pub enabled: bool,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            mode: InterferenceMode::AnchorOnly,
            enabled: false,
        }
    }
}

impl InterferenceConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
    /// Rescale sigma every batch so the expected noise norm equals the mean
    /// interference displacement `lambda * |mu_c - z|` it stands in for.
    pub norm_matched: bool,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma >= 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(config_err(format!("noise sigma must be non-negative, got {}", self.sigma)))
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(config_err(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}

/// `(1 - lambda) * z + lambda * mu`.
pub fn interfere(z: ArrayView1<f64>, mu: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    check_lambda(lambda)?;
    if z.len() != mu.len() {
        return Err(shape_err(format!(
            "embedding has dim {}, class mean has dim {}",
            z.len(),
            mu.len()
        )));
    }
    if lambda == 0.0 {
        return Ok(z.to_owned());
    }
    let keep = 1.0 - lambda;
    Ok(ndarray::Zip::from(&z)
        .and(&mu)
        .map_collect(|&a, &m| keep * a + lambda * m))
}

/// Gradient through the blend with the class mean held constant.
pub fn interfere_backward(grad_z_tilde: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    check_lambda(lambda)?;
    Ok(grad_z_tilde.mapv(|g| g * (1.0 - lambda)))
}

pub fn gaussian_perturb<R: Rng + ?Sized>(
    z: ArrayView1<f64>,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    Ok(perturb_with_sigma(z, cfg.sigma, rng))
}

fn perturb_with_sigma<R: Rng + ?Sized>(z: ArrayView1<f64>, sigma: f64, rng: &mut R) -> Array1<f64> {
    z.mapv(|v| {
        let e: f64 = StandardNormal.sample(rng);
        v + sigma * e
    })
}

/// A perturbed copy of a batch.
#[derive(Debug, Clone)]
pub struct PerturbedBatch {
    pub rows: Array2<f64>,
    /// `(row, class)` for every row blended toward `class`.
    pub audit: Vec<(usize, usize)>,
    /// Factor mapping the gradient w.r.t. a perturbed row back onto the raw row.
    pub grad_scale: Vec<f64>,
}

impl PerturbedBatch {
    fn unchanged(batch: &EmbeddingBatch) -> Self {
        Self {
            rows: batch.rows.clone(),
            audit: Vec::new(),
            grad_scale: vec![1.0; batch.len()],
        }
    }
}

/// Which rows a perturbation touches: anchors only, or all rows.
fn targets(batch: &EmbeddingBatch, mode: InterferenceMode, anchors: &[bool]) -> Result<Vec<usize>> {
    if anchors.len() != batch.len() {
        return Err(shape_err(format!(
            "{} role tags for {} rows",
            anchors.len(),
            batch.len()
        )));
    }
    Ok(match mode {
        InterferenceMode::AnchorOnly => (0..batch.len()).filter(|&i| anchors[i]).collect(),
        InterferenceMode::AllSamples => (0..batch.len()).collect(),
    })
}

fn check_labels(batch: &EmbeddingBatch, table: &ClassTable) -> Result<()> {
    if batch.dim() != table.dim() && !batch.is_empty() {
        return Err(shape_err(format!(
            "embeddings have dim {}, class table has {}",
            batch.dim(),
            table.dim()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= table.class_count()) {
        return Err(CirError::Index(format!(
            "label {bad} outside table of {} classes",
            table.class_count()
        )));
    }
    Ok(())
}

/// Blend the targeted rows of `batch`, each toward the table row of an
/// independently sampled wrong class.
///
/// One class draw is made per targeted row whenever interference is enabled,
/// including `lambda = 0`, so the random stream does not depend on `lambda`.
pub fn interfere_batch<R: Rng + ?Sized>(
    batch: &EmbeddingBatch,
    table: &ClassTable,
    cfg: &InterferenceConfig,
    anchors: &[bool],
    rng: &mut R,
) -> Result<PerturbedBatch> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(PerturbedBatch::unchanged(batch));
    }
    check_labels(batch, table)?;
    let mut out = PerturbedBatch::unchanged(batch);
    for i in targets(batch, cfg.mode, anchors)? {
        let c = table.sample_negative_class(batch.labels[i], rng)?;
        let mu = table.rows().row(c);
        let blended = interfere(batch.row(i), mu, cfg.lambda)?;
        out.rows.row_mut(i).assign(&blended);
        out.audit.push((i, c));
        out.grad_scale[i] = 1.0 - cfg.lambda;
    }
    Ok(out)
}

/// Add Gaussian noise to the rows interference would have touched.
///
/// With `norm_matched`, a wrong class is drawn per row exactly as in
/// [`interfere_batch`] and sigma becomes `mean(lambda * |mu_c - z|) / sqrt(d)`.
pub fn perturb_batch_gaussian<R: Rng + ?Sized>(
    batch: &EmbeddingBatch,
    table: &ClassTable,
    noise: &NoiseConfig,
    lambda: f64,
    mode: InterferenceMode,
    anchors: &[bool],
    rng: &mut R,
) -> Result<PerturbedBatch> {
    noise.validate()?;
    check_lambda(lambda)?;
    let rows = targets(batch, mode, anchors)?;
    let mut out = PerturbedBatch::unchanged(batch);
    let sigma = if noise.norm_matched && !rows.is_empty() {
        check_labels(batch, table)?;
        let mut total = 0.0;
        for &i in &rows {
            let c = table.sample_negative_class(batch.labels[i], rng)?;
            total += lambda * dist(table.rows().row(c), batch.row(i));
        }
        total / rows.len() as f64 / (batch.dim() as f64).sqrt()
    } else {
        noise.sigma
    };
    for &i in &rows {
        let noisy = perturb_with_sigma(batch.row(i), sigma, rng);
        out.rows.row_mut(i).assign(&noisy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blend_cases() {
        let z = array![2.0, 0.0];
        let mu = array![0.0, 4.0];
        assert_eq!(interfere(z.view(), mu.view(), 0.0).unwrap(), z);
        assert_eq!(interfere(z.view(), mu.view(), 1.0).unwrap(), mu);
        assert_eq!(interfere(z.view(), mu.view(), 0.25).unwrap(), array![1.5, 1.0]);
    }

    #[test]
    fn blend_errors() {
        let z = array![2.0, 0.0];
        assert!(matches!(
            interfere(z.view(), z.view(), 1.5),
            Err(CirError::Config(_))
        ));
        assert!(matches!(
            interfere(z.view(), array![1.0].view(), 0.5),
            Err(CirError::Shape(_))
        ));
    }

    #[test]
    fn backward_cases() {
        let g = array![2.0, -4.0];
        assert_eq!(interfere_backward(g.view(), 0.0).unwrap(), g);
        assert_eq!(interfere_backward(g.view(), 1.0).unwrap(), array![0.0, -0.0]);
        assert_eq!(interfere_backward(g.view(), 0.5).unwrap(), array![1.0, -2.0]);
    }

    fn toy_batch() -> (EmbeddingBatch, ClassTable) {
        let batch = EmbeddingBatch::new(
            array![[1.0, 2.0], [-1.0, 0.5], [3.0, -3.0]],
            vec![0, 1, 3],
        )
        .unwrap();
        let table = ClassTable::random(4, 2, 0.5, 17).unwrap();
        (batch, table)
    }

    #[test]
    fn disabled_is_identity() {
        let (batch, table) = toy_batch();
        let cfg = InterferenceConfig {
            enabled: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = interfere_batch(&batch, &table, &cfg, &[true; 3], &mut rng).unwrap();
        assert_eq!(out.rows, batch.rows);
        assert!(out.audit.is_empty());
    }

    #[test]
    fn no_anchors_no_change() {
        let (batch, table) = toy_batch();
        let cfg = InterferenceConfig {
            enabled: true,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = interfere_batch(&batch, &table, &cfg, &[false; 3], &mut rng).unwrap();
        assert_eq!(out.rows, batch.rows);
        assert!(out.audit.is_empty());
    }

    #[test]
    fn all_anchor_batch_matches_pointwise_blend() {
        let (batch, table) = toy_batch();
        let cfg = InterferenceConfig {
            lambda: 0.5,
            mode: InterferenceMode::AnchorOnly,
            enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = interfere_batch(&batch, &table, &cfg, &[true; 3], &mut rng).unwrap();
        assert_eq!(out.audit.len(), 3);
        for &(i, c) in &out.audit {
            assert_ne!(c, batch.labels[i]);
            let expect = &batch.row(i) * 0.5 + &table.rows().row(c) * 0.5;
            assert_eq!(out.rows.row(i), expect);
            assert_eq!(out.grad_scale[i], 0.5);
        }
    }

    #[test]
    fn anchor_only_leaves_non_anchors_bit_identical() {
        let (batch, table) = toy_batch();
        let cfg = InterferenceConfig {
            lambda: 0.3,
            mode: InterferenceMode::AnchorOnly,
            enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = interfere_batch(&batch, &table, &cfg, &[true, false, true], &mut rng).unwrap();
        assert_eq!(out.rows.row(1), batch.row(1));
        assert_eq!(out.grad_scale[1], 1.0);
        assert_eq!(out.audit.iter().map(|a| a.0).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn zero_lambda_consumes_the_same_draws() {
        let (batch, table) = toy_batch();
        let run = |lambda| {
            let cfg = InterferenceConfig {
                lambda,
                mode: InterferenceMode::AllSamples,
                enabled: true,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let out = interfere_batch(&batch, &table, &cfg, &[true; 3], &mut rng).unwrap();
            (out, rng.random::<u64>())
        };
        let (zero, after_zero) = run(0.0);
        let (half, after_half) = run(0.5);
        assert_eq!(zero.rows, batch.rows);
        assert_eq!(zero.audit, half.audit);
        assert_eq!(after_zero, after_half);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let z = array![1.0, -2.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NoiseConfig {
            sigma: 0.0,
            norm_matched: false,
        };
        assert_eq!(gaussian_perturb(z.view(), &cfg, &mut rng).unwrap(), z);
    }

    #[test]
    fn noise_moments() {
        let z = array![0.75];
        let cfg = NoiseConfig {
            sigma: 1.0,
            norm_matched: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| gaussian_perturb(z.view(), &cfg, &mut rng).unwrap()[0] - 0.75)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard errors: 1/sqrt(n) for the mean, sqrt(2/(n-1)) for the variance
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1) as f64).sqrt(), "var {var}");
    }

    #[test]
    fn noise_is_seeded() {
        let z = array![0.0, 0.0];
        let cfg = NoiseConfig {
            sigma: 0.5,
            norm_matched: false,
        };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| gaussian_perturb(z.view(), &cfg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn norm_matched_noise_scales_with_displacement() {
        let (batch, table) = toy_batch();
        let cfg = NoiseConfig {
            sigma: 0.0,
            norm_matched: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = perturb_batch_gaussian(
            &batch,
            &table,
            &cfg,
            0.5,
            InterferenceMode::AnchorOnly,
            &[true; 3],
            &mut rng,
        )
        .unwrap();
        assert_ne!(out.rows, batch.rows);
        assert!(out.grad_scale.iter().all(|&s| s == 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero = perturb_batch_gaussian(
            &batch,
            &table,
            &cfg,
            0.0,
            InterferenceMode::AnchorOnly,
            &[true; 3],
            &mut rng,
        )
        .unwrap();
        assert_eq!(zero.rows, batch.rows);
    }
}
