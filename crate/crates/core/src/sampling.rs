//! PK mini-batches for triplet training and N-way K-shot episodes for evaluation.

use rand::seq::index;
use rand::Rng;

use crate::datagen::Dataset;
use crate::error::{config_err, CirError, Result};

/// `P` classes with `K` samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PkSpec {
    pub classes: usize,
    pub per_class: usize,
}

impl PkSpec {
    pub fn batch_size(&self) -> usize {
        self.classes * self.per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class < 2 {
            return Err(config_err(format!(
                "PK batches need P >= 2 and K >= 2, got P={} K={}",
                self.classes, self.per_class
            )));
        }
        Ok(())
    }
}

fn check_class_sizes(ds: &Dataset, classes: usize, per_class: usize) -> Result<()> {
    if ds.class_count() < classes {
        return Err(CirError::Data(format!(
            "need {classes} classes, dataset has {}",
            ds.class_count()
        )));
    }
    if let Some((c, members)) = ds
        .indices_by_class()
        .iter()
        .enumerate()
        .find(|(_, m)| m.len() < per_class)
    {
        return Err(CirError::Data(format!(
            "class {c} has {} samples, need {per_class}",
            members.len()
        )));
    }
    Ok(())
}

/// Dataset indices of one PK batch, grouped by class in sampled order.
pub fn pk_batch<R: Rng + ?Sized>(ds: &Dataset, spec: &PkSpec, rng: &mut R) -> Result<Vec<usize>> {
    spec.validate()?;
    check_class_sizes(ds, spec.classes, spec.per_class)?;
    let by_class = ds.indices_by_class();
    let mut out = Vec::with_capacity(spec.batch_size());
    for c in index::sample(rng, ds.class_count(), spec.classes) {
        let members = &by_class[c];
        for k in index::sample(rng, members.len(), spec.per_class) {
            out.push(members[k]);
        }
    }
    Ok(out)
}

/// One N-way K-shot task. Episode labels are `0..way` in sampled class order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    /// Episode label to split label.
    pub classes: Vec<usize>,
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub queries: Vec<usize>,
    pub query_labels: Vec<usize>,
}

pub fn sample_episode<R: Rng + ?Sized>(
    split: &Dataset,
    way: usize,
    shot: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if way < 2 || shot == 0 || queries == 0 {
        return Err(config_err(format!(
            "episodes need way >= 2, shot >= 1, queries >= 1; got {way}/{shot}/{queries}"
        )));
    }
    check_class_sizes(split, way, shot + queries)?;
    let by_class = split.indices_by_class();
    let mut ep = Episode {
        way,
        shot,
        queries_per_class: queries,
        classes: Vec::with_capacity(way),
        support: Vec::with_capacity(way * shot),
        support_labels: Vec::with_capacity(way * shot),
        queries: Vec::with_capacity(way * queries),
        query_labels: Vec::with_capacity(way * queries),
    };
    for (label, c) in index::sample(rng, split.class_count(), way).into_iter().enumerate() {
        ep.classes.push(c);
        let members = &by_class[c];
        for (j, k) in index::sample(rng, members.len(), shot + queries).into_iter().enumerate() {
            if j < shot {
                ep.support.push(members[k]);
                ep.support_labels.push(label);
            } else {
                ep.queries.push(members[k]);
                ep.query_labels.push(label);
            }
        }
    }
    Ok(ep)
}

/// Seed of the `index`-th child stream of `master`.
///
/// `splitmix64(master ^ splitmix64(index))`; stable across releases.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_gaussian_mixture, GeneratorSpec, Nonlinearity};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn clean(classes: usize, per_class: usize) -> Dataset {
        gen_gaussian_mixture(&GeneratorSpec {
            classes,
            per_class,
            dim: 2,
            spread: 1.0,
            center_scale: 1.0,
            nonlinearity: Nonlinearity::None,
            label_noise: 0.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn pk_batch_composition() {
        let ds = clean(30, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = PkSpec {
            classes: 20,
            per_class: 4,
        };
        let batch = pk_batch(&ds, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 80);
        let mut counts = BTreeMap::new();
        for &i in &batch {
            *counts.entry(ds.labels()[i]).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&n| n == 4));
        assert_eq!(batch.iter().collect::<BTreeSet<_>>().len(), 80);
    }

    #[test]
    fn pk_batch_with_all_classes() {
        let ds = clean(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PkSpec {
            classes: 5,
            per_class: 2,
        };
        let batch = pk_batch(&ds, &spec, &mut rng).unwrap();
        let labels: BTreeSet<_> = batch.iter().map(|&i| ds.labels()[i]).collect();
        assert_eq!(labels, (0..5).collect());
    }

    #[test]
    fn pk_batch_names_small_class() {
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
        let ds = Dataset::new(Array2::zeros((labels.len(), 1)), labels, 3, String::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = pk_batch(
            &ds,
            &PkSpec {
                classes: 2,
                per_class: 4,
            },
            &mut rng,
        )
        .unwrap_err();
        match err {
            CirError::Data(msg) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn episode_shapes_and_disjointness() {
        let ds = clean(10, 20);
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = sample_episode(&ds, 5, 1, 15, &mut rng).unwrap();
            assert_eq!(ep.support.len(), 5);
            assert_eq!(ep.queries.len(), 75);
            let support: BTreeSet<_> = ep.support.iter().collect();
            assert!(ep.queries.iter().all(|q| !support.contains(q)));
            assert_eq!(
                ep.queries.iter().chain(&ep.support).collect::<BTreeSet<_>>().len(),
                80
            );
            for (i, &s) in ep.support.iter().enumerate() {
                assert_eq!(ds.labels()[s], ep.classes[ep.support_labels[i]]);
            }
        }
    }

    #[test]
    fn episodes_are_seeded() {
        let ds = clean(10, 20);
        let a = sample_episode(&ds, 5, 5, 10, &mut ChaCha8Rng::seed_from_u64(child_seed(9, 3))).unwrap();
        let b = sample_episode(&ds, 5, 5, 10, &mut ChaCha8Rng::seed_from_u64(child_seed(9, 3))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn episode_insufficiency() {
        let ds = clean(4, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_episode(&ds, 5, 1, 5, &mut rng), Err(CirError::Data(_))));
        assert!(matches!(sample_episode(&ds, 3, 5, 16, &mut rng), Err(CirError::Data(_))));
    }

    #[test]
    fn child_seeds_differ() {
        let seeds: BTreeSet<_> = (0..1000).map(|i| child_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(child_seed(42, 7), child_seed(42, 7));
    }
}
