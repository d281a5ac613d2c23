//! Episodic, retrieval and classification evaluation of one checkpoint.

use cir_core::datagen::{gen_gaussian_mixture, GeneratorSpec};
use cir_core::eval::EpisodeSpec;
use cir_core::trainer::{evaluate_checkpoint, train, LossMode, Protocol, TrainConfig};

fn main() -> cir_core::Result<()> {
    let ds = gen_gaussian_mixture(&GeneratorSpec::separable(4))?;
    let mut cfg = TrainConfig::reproduce(4);
    cfg.loss_mode = LossMode::Oim;
    cfg.tac_normalize = true;
    cfg.epochs = 5;
    let out = train(&ds, &ds, &cfg)?;

    let spec = EpisodeSpec::five_way(1, 5);
    for protocol in [Protocol::Episodic, Protocol::Retrieval, Protocol::Classification] {
        let report = evaluate_checkpoint(&out.model, &out.table, &ds, protocol, &spec, 11)?;
        println!("# {}", protocol.name());
        print!("{}", report.to_csv());
    }
    Ok(())
}
