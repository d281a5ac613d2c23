//! Cross-entropy warm start followed by triplet training with interference.

use cir_core::reproduce::seed_splits;
use cir_core::trainer::{logs_to_csv, train_two_stage, LossMode, TrainConfig};

fn main() -> cir_core::Result<()> {
    let splits = seed_splits(2)?;
    let mut second = TrainConfig::reproduce(2);
    second.epochs = 10;
    second.interference.enabled = true;

    let mut first = second.clone();
    first.loss_mode = LossMode::CrossEntropy;
    first.interference.enabled = false;
    first.epochs = 5;
    first.lr = 0.05;
    first.stage2 = Some(Box::new(second));

    let out = train_two_stage(&splits.train, &splits.val, &first)?;
    print!("{}", logs_to_csv(&out.logs));
    Ok(())
}
