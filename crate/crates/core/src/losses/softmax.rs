use ndarray::{Array1, ArrayView1};

use crate::error::{config_err, shape_err, CirError, Result};
use crate::tac::ClassTable;

/// Scores of an embedding against every table row: `table . z / temperature`.
pub fn oim_scores(table: &ClassTable, z_tilde: ArrayView1<f64>, temperature: f64) -> Result<Array1<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(config_err(format!("temperature must be positive, got {temperature}")));
    }
    if z_tilde.len() != table.dim() {
        return Err(shape_err(format!(
            "embedding has dim {}, table has {}",
            z_tilde.len(),
            table.dim()
        )));
    }
    Ok(table.rows().dot(&z_tilde) / temperature)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.mapv(|v| v - lse)
}

fn check_target(logits: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<()> {
    if logits.len() != target.len() {
        return Err(shape_err(format!(
            "{} logits for a {}-class target",
            logits.len(),
            target.len()
        )));
    }
    if target.iter().any(|&t| t.is_nan() || t < 0.0) || (target.sum() - 1.0).abs() > 1e-6 {
        return Err(CirError::Input("target is not a probability distribution".into()));
    }
    Ok(())
}

/// `-sum_c target_c * log softmax(logits)_c`.
pub fn cross_entropy(logits: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
    check_target(logits, target)?;
    let logp = log_softmax(logits);
    Ok(-target
        .iter()
        .zip(logp.iter())
        .filter(|(&t, _)| t > 0.0)
        .map(|(t, lp)| t * lp)
        .sum::<f64>())
}

/// Cross-entropy and its gradient w.r.t. the logits, `softmax(logits) - target`.
pub fn cross_entropy_with_grad(logits: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    let loss = cross_entropy(logits, target)?;
    Ok((loss, softmax(logits) - target))
}

/// `(1 - epsilon) * onehot(class) + epsilon / classes`.
pub fn label_smooth(class: usize, classes: usize, epsilon: f64) -> Result<Array1<f64>> {
    if class >= classes {
        return Err(CirError::Index(format!("class {class} outside {classes} classes")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(config_err(format!("label smoothing must lie in [0, 1), got {epsilon}")));
    }
    let mut t = Array1::from_elem(classes, epsilon / classes as f64);
    t[class] += 1.0 - epsilon;
    Ok(t)
}

/// Lookup-table classification loss for one (possibly blended) embedding.
/// Returns the loss and its gradient w.r.t. `z_tilde`, table held constant.
pub fn oim_loss(
    table: &ClassTable,
    z_tilde: ArrayView1<f64>,
    label: usize,
    temperature: f64,
    smoothing: f64,
) -> Result<(f64, Array1<f64>)> {
    let logits = oim_scores(table, z_tilde, temperature)?;
    let target = label_smooth(label, table.class_count(), smoothing)?;
    let (loss, grad_logits) = cross_entropy_with_grad(logits.view(), target.view())?;
    Ok((loss, table.rows().t().dot(&grad_logits) / temperature))
}
