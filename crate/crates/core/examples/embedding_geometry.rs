//! Inter- and intra-class distances of embeddings before and after training.

use cir_core::reproduce::seed_splits;
use cir_core::trainer::{split_geometry, train, TrainConfig};

fn main() -> cir_core::Result<()> {
    let splits = seed_splits(3)?;
    let mut cfg = TrainConfig::reproduce(3);
    cfg.epochs = 10;
    cfg.interference.enabled = true;
    let init = cir_core::nn::init_params(&cfg.layer_dims(splits.train.dim()), cfg.activation, 3)?;
    let trained = train(&splits.train, &splits.val, &cfg)?.model;

    for (label, model) in [("init", &init), ("trained", &trained)] {
        let [tr, va, te] = split_geometry(model, &splits)?;
        for (name, g) in [("train", tr), ("val", va), ("test", te)] {
            println!(
                "{label:7} {name:5} inter {:.4} intra {:.4} ratio {:.4}",
                g.inter_mean,
                g.intra_mean.unwrap_or(f64::NAN),
                g.ratio.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
