//! Parse a run config from text and train from it.

use cir_core::config::parse_run_config;
use cir_core::datagen::{gen_gaussian_mixture, split_classes, GeneratorSpec};
use cir_core::trainer::run;

const CONFIG: &str = "
loss_mode = triplet
hidden = 32
embedding_dim = 8
interference = true
lambda = 0.5
lr = 0.01
epochs = 5
iters_per_epoch = 20
pk_classes = 8
monitor_episodes = 10
split_train = 0.5
split_val = 0.25
split_test = 0.25
";

fn main() -> cir_core::Result<()> {
    let cfg = parse_run_config(CONFIG)?;
    let ds = gen_gaussian_mixture(&GeneratorSpec::reproduce(5))?;
    let splits = split_classes(&ds, cfg.split_fractions, cfg.split_seed)?;
    let out = run(&splits.train, &splits.val, &cfg.train)?;
    println!("final loss {:.4}", out.logs.last().unwrap().train_loss);
    println!("{}", parse_run_config("lambda = 2").unwrap_err());
    Ok(())
}
