//! Triplet training with and without class interference on the same split.

use cir_core::reproduce::seed_splits;
use cir_core::trainer::{train, TrainConfig};

fn main() -> cir_core::Result<()> {
    let splits = seed_splits(1)?;
    for enabled in [false, true] {
        let mut cfg = TrainConfig::reproduce(1);
        cfg.epochs = 15;
        cfg.interference.enabled = enabled;
        let out = train(&splits.train, &splits.val, &cfg)?;
        let last = out.logs.last().unwrap();
        println!(
            "interference={enabled}: loss {:.4} train {:.3} val {:.3}",
            last.train_loss,
            last.train_acc,
            last.val_acc
        );
    }
    Ok(())
}
