//! Finite-difference check of the full training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cir_core::losses::batch_all_triplets;
use cir_core::nn::{grad_check, init_params, Activation};
use cir_core::tac::ClassTable;
use cir_core::trainer::{step_objective, LossMode, StepBatch, TrainConfig};

fn main() -> cir_core::Result<()> {
    let x = ndarray::Array2::from_shape_fn((8, 5), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 3.0 - 1.0);
    let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
    let model = init_params(&[5, 6, 3], Activation::Tanh, 1)?;
    let table = ClassTable::random(4, 3, 0.5, 2)?;
    for mode in [LossMode::Triplet, LossMode::Oim] {
        let mut cfg = TrainConfig {
            loss_mode: mode,
            activation: Activation::Tanh,
            ..TrainConfig::default()
        };
        cfg.interference.enabled = true;
        let batch = StepBatch {
            x: x.clone(),
            labels: labels.clone(),
            triplets: (mode == LossMode::Triplet).then(|| batch_all_triplets(&labels)),
        };
        let worst = grad_check(
            &model,
            |m| {
                let out = step_objective(m, None, &table, &cfg, &batch, &mut ChaCha8Rng::seed_from_u64(9))?;
                Ok((out.loss, out.encoder_grads))
            },
            1e-5,
        )?;
        println!("{}: worst relative error {worst:.2e}", mode.name());
    }
    Ok(())
}
