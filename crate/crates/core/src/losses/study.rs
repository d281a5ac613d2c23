//! The single-layer regression case: a linear embedding `z = W x` regressed on
//! a target `y`, with and without class interference toward a fixed `mu`.

use ndarray::{Array1, Array2};

use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCase {
    pub w: Array2<f64>,
    pub x: Array1<f64>,
    pub y: Array1<f64>,
    pub mu: Array1<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCaseLoss {
    /// `1/2 |W x - y|^2`
    pub plain: f64,
    /// `1/2 |(1 - lambda) W x + lambda mu - y|^2`
    pub blended: f64,
    /// `1/2 |(W x - y) - lambda (W x - mu)|^2`
    pub regularized: f64,
    /// Gradient of the blended loss w.r.t. `W`: `(1 - lambda) r x^T`.
    pub grad_w: Array2<f64>,
}

pub fn study_case_loss(case: &StudyCase) -> Result<StudyCaseLoss> {
    let (out, inp) = case.w.dim();
    if case.x.len() != inp || case.y.len() != out || case.mu.len() != out {
        return Err(shape_err(format!(
            "W is {out}x{inp}, x has {}, y has {}, mu has {}",
            case.x.len(),
            case.y.len(),
            case.mu.len()
        )));
    }
    if !(0.0..=1.0).contains(&case.lambda) {
        return Err(config_err(format!("lambda must lie in [0, 1], got {}", case.lambda)));
    }
    let lambda = case.lambda;
    let z = case.w.dot(&case.x);
    let half_sq = |v: &Array1<f64>| 0.5 * v.dot(v);

    let plain = half_sq(&(&z - &case.y));
    let resid = &z * (1.0 - lambda) + &case.mu * lambda - &case.y;
    let blended = half_sq(&resid);
    let split = (&z - &case.y) - (&z - &case.mu) * lambda;
    let regularized = half_sq(&split);

    let scaled = &resid * (1.0 - lambda);
    let grad_w = scaled
        .view()
        .insert_axis(ndarray::Axis(1))
        .dot(&case.x.view().insert_axis(ndarray::Axis(0)));
    Ok(StudyCaseLoss {
        plain,
        blended,
        regularized,
        grad_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_case() {
        let case = StudyCase {
            w: array![[1.0]],
            x: array![1.0],
            y: array![0.0],
            mu: array![2.0],
            lambda: 0.5,
        };
        let out = study_case_loss(&case).unwrap();
        assert_eq!(out.blended, 1.125);
        assert_eq!(out.regularized, 1.125);
        assert_eq!(out.plain, 0.5);
        assert_eq!(out.grad_w, array![[0.75]]);
    }

    #[test]
    fn zero_lambda_reduces_to_plain() {
        let case = StudyCase {
            w: array![[0.5, -1.0], [2.0, 0.25]],
            x: array![1.5, -0.5],
            y: array![0.3, 0.1],
            mu: array![9.0, -9.0],
            lambda: 0.0,
        };
        let out = study_case_loss(&case).unwrap();
        assert_eq!(out.blended, out.plain);
        assert_eq!(out.regularized, out.plain);
    }

    #[test]
    fn shape_mismatch() {
        let case = StudyCase {
            w: array![[1.0, 2.0]],
            x: array![1.0],
            y: array![0.0],
            mu: array![2.0],
            lambda: 0.5,
        };
        assert!(study_case_loss(&case).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = StudyCase {
            w: array![[0.5, -1.0, 0.3], [2.0, 0.25, -0.7]],
            x: array![1.5, -0.5, 0.8],
            y: array![0.3, 0.1],
            mu: array![1.0, -2.0],
            lambda: 0.3,
        };
        let analytic = study_case_loss(&base).unwrap().grad_w;
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = base.clone();
                plus.w[[i, j]] += eps;
                let mut minus = base.clone();
                minus.w[[i, j]] -= eps;
                let numeric = (study_case_loss(&plus).unwrap().blended
                    - study_case_loss(&minus).unwrap().blended)
                    / (2.0 * eps);
                let a = analytic[[i, j]];
                assert!((a - numeric).abs() / a.abs().max(1e-12) < 1e-6, "{a} vs {numeric}");
            }
        }
    }

    #[test]
    fn scalar_second_derivative_is_nonnegative() {
        // d^2 L / dW^2 = (1 - lambda)^2 x^2 in the scalar case
        for &(x, lambda) in &[(1.0, 0.5), (-2.0, 0.1), (0.3, 0.9)] {
            let h = 1e-4;
            let at = |w: f64| {
                study_case_loss(&StudyCase {
                    w: array![[w]],
                    x: array![x],
                    y: array![0.4],
                    mu: array![-1.0],
                    lambda,
                })
                .unwrap()
                .blended
            };
            let second = (at(0.7 + h) - 2.0 * at(0.7) + at(0.7 - h)) / (h * h);
            let expected = (1.0 - lambda) * (1.0 - lambda) * x * x;
            assert!(second >= 0.0);
            assert!((second - expected).abs() < 1e-5);
        }
    }
}
