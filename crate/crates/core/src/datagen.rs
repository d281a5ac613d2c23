//! Synthetic labeled datasets, class-disjoint splits, and the `CIRD` file format.
//!
//! `CIRD` layout, little-endian: magic `CIRD`, `u32` version, `u32` n, `u32`
//! d_in, `u32` C, then n records of `u32` label followed by d_in `f32`
//! features, then the generator spec as UTF-8 text up to end of file.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, CirError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CIRD";
pub const DATASET_VERSION: u32 = 1;

/// Labeled feature rows. Features are kept at 32-bit precision, the same as
/// on disk, so a save/load cycle is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f32>,
    labels: Vec<usize>,
    class_count: usize,
    provenance: String,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        class_count: usize,
        provenance: String,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(CirError::Data(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CirError::Data("non-finite feature".into()));
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(CirError::Data(format!("label {l} outside {class_count} classes")));
            }
            by_class[l].push(i);
        }
        if let Some(empty) = by_class.iter().position(|v| v.is_empty()) {
            return Err(CirError::Data(format!("class {empty} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            provenance,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Sample indices of each class, in dataset order.
    pub fn indices_by_class(&self) -> &[Vec<usize>] {
        &self.by_class
    }

    /// Selected rows widened to 64-bit.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r)
                .assign(&self.features.row(i).mapv(f64::from));
        }
        out
    }

    pub fn all_rows(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + self.len() * (4 + 4 * self.dim()));
        buf.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION, self.len() as u32, self.dim() as u32, self.class_count as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (i, &label) in self.labels.iter().enumerate() {
            buf.extend_from_slice(&(label as u32).to_le_bytes());
            for &f in self.features.row(i) {
                buf.extend_from_slice(&f.to_le_bytes());
            }
        }
        buf.extend_from_slice(self.provenance.as_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = crate::checkpoint::ByteCursor::new(&bytes);
        if cur.take(4)? != DATASET_MAGIC {
            return Err(CirError::Format("not a CIRD dataset file".into()));
        }
        let version = cur.u32()?;
        if version != DATASET_VERSION {
            return Err(CirError::Format(format!("unsupported dataset version {version}")));
        }
        let n = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let classes = cur.u32()? as usize;
        let mut labels = Vec::with_capacity(n);
        let mut features = Array2::<f32>::zeros((n, dim));
        for i in 0..n {
            labels.push(cur.u32()? as usize);
            for j in 0..dim {
                features[[i, j]] = cur.f32()?;
            }
        }
        let provenance = String::from_utf8(cur.rest().to_vec())
            .map_err(|_| CirError::Format("dataset footer is not UTF-8".into()))?;
        Dataset::new(features, labels, classes, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    None,
    /// Random rotation, coupled tanh warp, second random rotation.
    #[default]
    RotateMix,
}

impl Nonlinearity {
    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::RotateMix => "rotate_mix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "rotate_mix" => Ok(Nonlinearity::RotateMix),
            other => Err(config_err(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

/// Parameters of the Gaussian-mixture generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation around each class center.
    pub spread: f64,
    /// Centers are uniform in `[-center_scale, center_scale]^dim`.
    pub center_scale: f64,
    pub nonlinearity: Nonlinearity,
    pub label_noise: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Few samples per class, label noise and a nonlinear warp, so a small
    /// encoder can overfit the training classes.
    pub fn reproduce(seed: u64) -> Self {
        Self {
            classes: 40,
            per_class: 25,
            dim: 32,
            spread: 0.5,
            center_scale: 1.0,
            nonlinearity: Nonlinearity::RotateMix,
            label_noise: 0.1,
            seed,
        }
    }

    /// Tight, far-apart clusters with no warp or label noise.
    pub fn separable(seed: u64) -> Self {
        Self {
            classes: 12,
            per_class: 20,
            dim: 8,
            spread: 0.01,
            center_scale: 10.0,
            nonlinearity: Nonlinearity::None,
            label_noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.per_class == 0 || self.dim == 0 {
            return Err(config_err("samples per class and dimension must be positive"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(config_err(format!("spread must be positive, got {}", self.spread)));
        }
        if !(self.center_scale >= 0.0 && self.center_scale.is_finite()) {
            return Err(config_err("center scale must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(config_err(format!(
                "label noise must lie in [0, 1), got {}",
                self.label_noise
            )));
        }
        Ok(())
    }

    /// `key = value` lines, parseable by [`crate::config::parse_generator_spec`].
    pub fn to_text(&self) -> String {
        format!(
            "classes = {}\nper_class = {}\ndim = {}\nspread = {}\ncenter_scale = {}\nnonlinearity = {}\nlabel_noise = {}\nseed = {}\n",
            self.classes,
            self.per_class,
            self.dim,
            self.spread,
            self.center_scale,
            self.nonlinearity.name(),
            self.label_noise,
            self.seed
        )
    }
}

/// Class centers of `spec`, the first values drawn by [`gen_gaussian_mixture`].
pub fn class_centers(spec: &GeneratorSpec) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    draw_centers(spec, &mut rng)
}

fn draw_centers(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let s = spec.center_scale;
    Array2::from_shape_simple_fn((spec.classes, spec.dim), || {
        if s > 0.0 {
            rng.random_range(-s..=s)
        } else {
            0.0
        }
    })
}

fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    // Gram-Schmidt on a Gaussian matrix
    let mut q = Array2::<f64>::from_shape_simple_fn((dim, dim), || StandardNormal.sample(rng));
    for i in 0..dim {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let rj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|v| v / norm);
    }
    q
}

fn rotate_mix(x: &mut Array2<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    let dim = x.ncols();
    let first = random_rotation(dim, rng);
    let second = random_rotation(dim, rng);
    let s = if scale > 0.0 { scale } else { 1.0 };
    let u = x.dot(&first.t());
    let mut v = Array2::zeros(u.raw_dim());
    for i in 0..u.nrows() {
        for j in 0..dim {
            v[[i, j]] = s * (u[[i, j]] / s).tanh() + 0.5 * u[[i, (j + 1) % dim]];
        }
    }
    *x = v.dot(&second.t());
}

/// Gaussian clusters around uniform random centers, optionally warped and
/// with a fraction of labels moved to a wrong class. Samples are ordered by
/// class.
pub fn gen_gaussian_mixture(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = draw_centers(spec, &mut rng);
    let n = spec.classes * spec.per_class;
    let mut x = Array2::<f64>::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for k in 0..spec.per_class {
            let row = c * spec.per_class + k;
            for j in 0..spec.dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[row, j]] = centers[[c, j]] + spec.spread * e;
            }
            labels.push(c);
        }
    }
    if spec.nonlinearity == Nonlinearity::RotateMix {
        rotate_mix(&mut x, spec.center_scale, &mut rng);
    }
    let flips = (spec.label_noise * n as f64).round() as usize;
    for i in index::sample(&mut rng, n, flips).into_vec() {
        let wrong = rng.random_range(0..spec.classes - 1);
        labels[i] = if wrong >= labels[i] { wrong + 1 } else { wrong };
    }
    Dataset::new(x.mapv(|v| v as f32), labels, spec.classes, spec.to_text())
}

/// Three class-disjoint datasets with labels re-indexed densely per split.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// For each split, the original class id of every new label.
    pub class_maps: [Vec<usize>; 3],
}

/// Permute the classes by `seed` and partition them by `fractions`.
pub fn split_classes(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<DataSplits> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(config_err(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let c = ds.class_count();
    let n_train = (c as f64 * ft).round() as usize;
    let n_val = (c as f64 * fv).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= c {
        return Err(config_err(format!(
            "{c} classes cannot be split {fractions:?} with every split non-empty"
        )));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let maps = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    let names = ["train", "val", "test"];
    let mut parts = Vec::with_capacity(3);
    for (map, name) in maps.iter().zip(names) {
        let mut new_label = vec![usize::MAX; c];
        for (new, &orig) in map.iter().enumerate() {
            new_label[orig] = new;
        }
        let indices: Vec<usize> = (0..ds.len()).filter(|&i| new_label[ds.labels[i]] != usize::MAX).collect();
        let mut features = Array2::<f32>::zeros((indices.len(), ds.dim()));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&ds.features.row(i));
        }
        let labels = indices.iter().map(|&i| new_label[ds.labels[i]]).collect();
        let provenance = format!(
            "{}# split {name} seed {seed} classes {}\n",
            ds.provenance,
            map.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        );
        parts.push(Dataset::new(features, labels, map.len(), provenance)?);
    }
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(DataSplits {
        train,
        val,
        test,
        class_maps: maps,
    })
}

/// Nearest row of `centers` by Euclidean distance, lowest index on ties.
pub fn nearest_center(x: &Array1<f64>, centers: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = crate::embedding::sq_dist(x.view(), row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}
