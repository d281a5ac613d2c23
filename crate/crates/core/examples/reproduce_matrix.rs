//! A shortened version of the three-arm comparison.

use cir_core::reproduce::{run_matrix, ReproduceSpec};

fn main() -> cir_core::Result<()> {
    let mut spec = ReproduceSpec::new(vec![1, 2]);
    spec.epochs = Some(10);
    spec.final_episodes.episodes = 200;
    let report = run_matrix(&spec)?;
    print!("{}", report.summary_csv());
    for v in report.verdicts() {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    Ok(())
}
