//! Generate a class-structured mixture, split it by class and save it.

use cir_core::{gen_gaussian_mixture, split_classes, Dataset, GeneratorSpec};

fn main() -> cir_core::Result<()> {
    let spec = GeneratorSpec::reproduce(7);
    let ds = gen_gaussian_mixture(&spec)?;
    println!("{} samples, {} classes, dim {}", ds.len(), ds.class_count(), ds.dim());

    let splits = split_classes(&ds, (0.6, 0.2, 0.2), 7)?;
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        println!("{name}: {} classes, {} samples", part.class_count(), part.len());
    }

    let path = std::env::temp_dir().join("cir_example.ds");
    ds.save(&path)?;
    assert_eq!(Dataset::load(&path)?, ds);
    println!("saved to {}", path.display());
    println!("{}", spec.to_text());
    Ok(())
}
