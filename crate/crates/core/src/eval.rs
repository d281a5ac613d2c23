//! Evaluation: episodic few-shot accuracy, retrieval metrics and embedding
//! geometry statistics.

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::embedding::{dist, sq_dist, EmbeddingBatch};
use crate::error::{config_err, CirError, Result};
use crate::nn::{forward, ModelParams};
use crate::sampling::{child_seed, sample_episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; ablation only.
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(config_err(format!("unknown metric `{other}`"))),
        }
    }

    pub fn distance(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            Metric::Euclidean => dist(a, b),
            Metric::Cosine => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - a.dot(&b) / (na * nb)
                }
            }
        }
    }
}

/// Per-class means of the support rows; row `c` is the prototype of episode class `c`.
pub fn prototypes(support: &Array2<f64>, labels: &[usize], way: usize) -> Result<Array2<f64>> {
    let mut sums = Array2::<f64>::zeros((way, support.ncols()));
    let mut counts = vec![0usize; way];
    for (i, &l) in labels.iter().enumerate() {
        if l >= way {
            return Err(CirError::Index(format!("support label {l} outside {way} classes")));
        }
        let mut row = sums.row_mut(l);
        row += &support.row(i);
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(CirError::Data(format!("support has no sample of class {c}")));
    }
    for (c, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        row /= counts[c] as f64;
    }
    Ok(sums)
}

/// Closest prototype by squared Euclidean distance, lowest class on ties.
pub fn nearest_prototype(prototypes: &Array2<f64>, query: ArrayView1<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, p) in prototypes.rows().into_iter().enumerate() {
        let d = sq_dist(p, query);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

pub fn nearest_prototype_classify(
    support: &Array2<f64>,
    support_labels: &[usize],
    way: usize,
    query: ArrayView1<f64>,
) -> Result<usize> {
    Ok(nearest_prototype(&prototypes(support, support_labels, way)?, query))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
}

impl EpisodeSpec {
    /// 5-way, 600 episodes.
    pub fn five_way(shot: usize, queries: usize) -> Self {
        Self {
            way: 5,
            shot,
            queries,
            episodes: 600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodicResult {
    pub mean: f64,
    /// `1.96 * sd / sqrt(E)` with the sample standard deviation.
    pub half_width: f64,
    pub episodes: usize,
}

impl EpisodicResult {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.half_width / 1.96
    }
}

/// Accuracy over `spec.episodes` episodes of `split`, embedding with `model`.
/// Episode `i` draws from the child stream `child_seed(master_seed, i)`.
pub fn episodic_accuracy(
    model: &ModelParams,
    split: &Dataset,
    spec: &EpisodeSpec,
    master_seed: u64,
) -> Result<EpisodicResult> {
    let (embeddings, _) = forward(model, &split.all_rows())?;
    episodic_accuracy_on(&embeddings, split, spec, master_seed)
}

/// As [`episodic_accuracy`], over precomputed embeddings of every row of `split`.
pub fn episodic_accuracy_on(
    embeddings: &Array2<f64>,
    split: &Dataset,
    spec: &EpisodeSpec,
    master_seed: u64,
) -> Result<EpisodicResult> {
    if spec.episodes == 0 {
        return Err(config_err("episode count must be positive"));
    }
    if embeddings.nrows() != split.len() {
        return Err(crate::error::shape_err("one embedding per split row is required"));
    }
    let per_episode = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, i as u64));
            let ep = sample_episode(split, spec.way, spec.shot, spec.queries, &mut rng)?;
            let support = select(embeddings, &ep.support);
            let protos = prototypes(&support, &ep.support_labels, ep.way)?;
            let correct = ep
                .queries
                .iter()
                .zip(&ep.query_labels)
                .filter(|(&q, &l)| nearest_prototype(&protos, embeddings.row(q)) == l)
                .count();
            Ok(correct as f64 / ep.queries.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&per_episode))
}

fn summarize(values: &[f64]) -> EpisodicResult {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    EpisodicResult {
        mean,
        half_width: 1.96 * sd / n.sqrt(),
        episodes: values.len(),
    }
}

fn select(rows: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    rows.select(Axis(0), indices)
}

/// Gallery order for one query: ascending distance, gallery index on ties.
fn ranking(query: ArrayView1<f64>, gallery: &EmbeddingBatch, metric: Metric) -> Vec<usize> {
    let d: Vec<f64> = (0..gallery.len())
        .map(|g| metric.distance(query, gallery.row(g)))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order
}

fn check_positives(queries: &EmbeddingBatch, gallery: &EmbeddingBatch) -> Result<()> {
    if queries.is_empty() {
        return Err(CirError::Data("no queries".into()));
    }
    let mut missing: Vec<usize> = queries
        .labels
        .iter()
        .filter(|l| !gallery.labels.contains(l))
        .copied()
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CirError::Data(format!("query labels without a gallery positive: {missing:?}")))
    }
}

/// Mean over queries of the average precision of the ranked gallery, where
/// AP averages the precision at the rank of each relevant item.
pub fn retrieval_map(queries: &EmbeddingBatch, gallery: &EmbeddingBatch, metric: Metric) -> Result<f64> {
    check_positives(queries, gallery)?;
    let mut total = 0.0;
    for q in 0..queries.len() {
        let label = queries.labels[q];
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, g) in ranking(queries.row(q), gallery, metric).into_iter().enumerate() {
            if gallery.labels[g] == label {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        total += ap / hits as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Fraction of queries whose top-ranked gallery item shares their label.
pub fn cmc_rank1(queries: &EmbeddingBatch, gallery: &EmbeddingBatch, metric: Metric) -> Result<f64> {
    check_positives(queries, gallery)?;
    let hits = (0..queries.len())
        .filter(|&q| {
            let top = ranking(queries.row(q), gallery, metric)[0];
            gallery.labels[top] == queries.labels[q]
        })
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryStats {
    /// Mean distance of each embedding to the overall center of mass.
    pub center_distance: f64,
    pub inter_mean: f64,
    /// Absent when no class has two samples.
    pub intra_mean: Option<f64>,
    /// `inter / intra`; absent when intra is absent or zero.
    pub ratio: Option<f64>,
}

pub fn geometry_stats(batch: &EmbeddingBatch) -> Result<GeometryStats> {
    let mut labels = batch.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(CirError::Data("geometry statistics need at least two classes".into()));
    }
    let n = batch.len();
    let center = batch.rows.mean_axis(Axis(0)).expect("non-empty batch");
    let center_distance = (0..n).map(|i| dist(batch.row(i), center.view())).sum::<f64>() / n as f64;
    let (mut inter, mut n_inter, mut intra, mut n_intra) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(batch.row(i), batch.row(j));
            if batch.labels[i] == batch.labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let inter_mean = inter / n_inter as f64;
    let intra_mean = (n_intra > 0).then(|| intra / n_intra as f64);
    let ratio = intra_mean.filter(|&v| v > 0.0).map(|v| inter_mean / v);
    Ok(GeometryStats {
        center_distance,
        inter_mean,
        intra_mean,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_gaussian_mixture, GeneratorSpec};
    use ndarray::array;

    #[test]
    fn prototype_cases() {
        let support = array![[0.0, 0.0], [4.0, 0.0]];
        assert_eq!(nearest_prototype_classify(&support, &[0, 1], 2, array![1.0, 0.0].view()).unwrap(), 0);
        assert_eq!(nearest_prototype_classify(&support, &[0, 1], 2, array![4.0, 0.0].view()).unwrap(), 1);
        assert_eq!(nearest_prototype_classify(&support, &[0, 1], 2, array![2.0, 0.0].view()).unwrap(), 0);
        assert_eq!(nearest_prototype_classify(&support, &[1, 0], 2, array![2.0, 5.0].view()).unwrap(), 0);
    }

    #[test]
    fn prototypes_are_means() {
        let support = array![[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]];
        let p = prototypes(&support, &[0, 0, 1], 2).unwrap();
        assert_eq!(p, array![[1.0, 1.0], [4.0, 0.0]]);
        assert!(prototypes(&support, &[0, 0, 0], 2).is_err());
    }

    #[test]
    fn separable_identity_is_perfect() {
        let ds = gen_gaussian_mixture(&GeneratorSpec::separable(3)).unwrap();
        let model = ModelParams::identity(ds.dim());
        let r = episodic_accuracy(&model, &ds, &EpisodeSpec::five_way(1, 10), 1).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.half_width, 0.0);
        assert_eq!(r.episodes, 600);
    }

    #[test]
    fn zero_episodes_rejected() {
        let ds = gen_gaussian_mixture(&GeneratorSpec::separable(3)).unwrap();
        let spec = EpisodeSpec {
            episodes: 0,
            ..EpisodeSpec::five_way(1, 5)
        };
        assert!(episodic_accuracy(&ModelParams::identity(ds.dim()), &ds, &spec, 1).is_err());
    }

    fn batch(rows: Array2<f64>, labels: Vec<usize>) -> EmbeddingBatch {
        EmbeddingBatch::new(rows, labels).unwrap()
    }

    #[test]
    fn ap_cases() {
        let q = batch(array![[0.0]], vec![1]);
        let first = batch(array![[0.1], [0.5]], vec![1, 2]);
        assert_eq!(retrieval_map(&q, &first, Metric::Euclidean).unwrap(), 1.0);
        let second = batch(array![[0.5], [0.1]], vec![1, 2]);
        assert_eq!(retrieval_map(&q, &second, Metric::Euclidean).unwrap(), 0.5);
        let three = batch(array![[0.1], [0.2], [0.3]], vec![1, 2, 1]);
        let ap = retrieval_map(&q, &three, Metric::Euclidean).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rank1_cases() {
        let q = batch(array![[0.0], [1.0]], vec![0, 1]);
        let g = batch(array![[0.0], [1.0]], vec![0, 1]);
        assert_eq!(cmc_rank1(&q, &g, Metric::Euclidean).unwrap(), 1.0);
        let g = batch(array![[0.0], [1.0], [5.0], [6.0]], vec![1, 0, 0, 1]);
        assert_eq!(cmc_rank1(&q, &g, Metric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn missing_positive_is_reported() {
        let q = batch(array![[0.0]], vec![7]);
        let g = batch(array![[0.0]], vec![1]);
        match retrieval_map(&q, &g, Metric::Euclidean) {
            Err(CirError::Data(msg)) => assert!(msg.contains('7')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(cmc_rank1(&q, &g, Metric::Euclidean).is_err());
    }

    #[test]
    fn geometry_cases() {
        let same = batch(array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], vec![0, 0, 1]);
        let s = geometry_stats(&same).unwrap();
        assert_eq!(s.center_distance, 0.0);
        assert_eq!(s.ratio, None);

        let two = batch(array![[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]], vec![0, 0, 1, 1]);
        let s = geometry_stats(&two).unwrap();
        assert_eq!(s.intra_mean, Some(0.0));
        assert_eq!(s.ratio, None);
        assert_eq!(s.inter_mean, 5.0);
        assert_eq!(s.center_distance, 2.5);

        let singletons = batch(array![[0.0], [1.0]], vec![0, 1]);
        assert_eq!(geometry_stats(&singletons).unwrap().intra_mean, None);
        assert!(geometry_stats(&batch(array![[0.0], [1.0]], vec![0, 0])).is_err());
    }

    #[test]
    fn geometry_scales() {
        let b = batch(array![[0.0, 1.0], [0.5, 1.5], [3.0, 0.0], [2.0, -1.0]], vec![0, 0, 1, 1]);
        let s1 = geometry_stats(&b).unwrap();
        let s2 = geometry_stats(&batch(&b.rows * 2.0, b.labels.clone())).unwrap();
        assert!((s2.center_distance - 2.0 * s1.center_distance).abs() < 1e-12);
        assert!((s2.inter_mean - 2.0 * s1.inter_mean).abs() < 1e-12);
        assert!((s2.intra_mean.unwrap() - 2.0 * s1.intra_mean.unwrap()).abs() < 1e-12);
        assert!((s2.ratio.unwrap() - s1.ratio.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cosine_metric() {
        let a = array![1.0, 0.0];
        assert!(Metric::Cosine.distance(a.view(), array![2.0, 0.0].view()).abs() < 1e-15);
        assert!((Metric::Cosine.distance(a.view(), array![0.0, 3.0].view()) - 1.0).abs() < 1e-15);
    }
}
