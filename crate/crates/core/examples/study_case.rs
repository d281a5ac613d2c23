//! Blending a linear regression output toward a class mean equals adding a
//! pull term toward that mean.

use ndarray::{array, Array2};

use cir_core::losses::{study_case_loss, StudyCase};

fn main() -> cir_core::Result<()> {
    let w = Array2::from_shape_fn((3, 4), |(i, j)| ((i + 2 * j) % 5) as f64 / 4.0 - 0.5);
    for lambda in [0.0, 0.25, 0.5, 1.0] {
        let case = StudyCase {
            w: w.clone(),
            x: array![1.0, -0.5, 0.25, 2.0],
            y: array![0.5, 0.0, -1.0],
            mu: array![1.0, 1.0, 0.0],
            lambda,
        };
        let l = study_case_loss(&case)?;
        println!(
            "lambda {lambda:.2}: plain {:.6} blended {:.6} regularized {:.6}",
            l.plain, l.blended, l.regularized
        );
    }
    Ok(())
}
