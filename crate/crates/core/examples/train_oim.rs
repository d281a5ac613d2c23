//! OIM training against the class table, cross-entropy against a linear head.

use cir_core::datagen::{gen_gaussian_mixture, split_classes, GeneratorSpec};
use cir_core::trainer::{train, LossMode, TrainConfig};

fn main() -> cir_core::Result<()> {
    let ds = gen_gaussian_mixture(&GeneratorSpec::reproduce(3))?;
    let splits = split_classes(&ds, (0.6, 0.2, 0.2), 3)?;
    for mode in [LossMode::Oim, LossMode::CrossEntropy] {
        let mut cfg = TrainConfig::reproduce(3);
        cfg.loss_mode = mode;
        cfg.epochs = 10;
        cfg.tac_normalize = mode == LossMode::Oim;
        cfg.interference.enabled = true;
        let out = train(&splits.train, &splits.val, &cfg)?;
        for log in out.logs.iter().step_by(3) {
            println!("{} epoch {:2}: loss {:.4} train acc {:.3}", mode.name(), log.epoch, log.train_loss, log.train_acc);
        }
    }
    Ok(())
}
