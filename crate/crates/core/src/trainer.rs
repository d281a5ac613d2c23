//! Training loops: triplet with class interference over PK batches,
//! lookup-table classification against the class table, cross-entropy with a
//! linear head, and the cross-entropy then triplet two-stage schedule.
//!
//! Every run is single-threaded in its mutation and fully determined by its
//! config. Independent random streams are derived from the run seed for batch
//! sampling, perturbation draws and initialization, so switching
//! interference on or off never shifts the batch sequence.

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{DataSplits, Dataset};
use crate::embedding::EmbeddingBatch;
use crate::error::{config_err, CirError, Result};
use crate::eval::{
    cmc_rank1, episodic_accuracy_on, geometry_stats, retrieval_map, EpisodeSpec, GeometryStats, Metric,
};
use crate::interference::{interfere_batch, perturb_batch_gaussian, InterferenceConfig, NoiseConfig};
use crate::losses::{
    argmax, batch_all_triplets, cross_entropy_with_grad, label_smooth, oim_loss, oim_scores,
    triplet_set_loss, TripletConfig, TripletIndexSet,
};
use crate::nn::{backward, backward_with_input, forward, init_params, sgd_step, Activation, LrSchedule, ModelParams, ParamGrads};
use crate::sampling::{child_seed, pk_batch, PkSpec};
use crate::tac::{class_means, ClassTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Triplet,
    Oim,
    CrossEntropy,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Triplet => "triplet",
            LossMode::Oim => "oim",
            LossMode::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(LossMode::Triplet),
            "oim" => Ok(LossMode::Oim),
            "cross_entropy" => Ok(LossMode::CrossEntropy),
            other => Err(config_err(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// How triplet batches are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletSource {
    /// PK batches with every valid triplet mined inside the batch.
    #[default]
    BatchAll,
    /// `batch_size` independently drawn `(a, p, n)` triples.
    PreFormed,
}

impl TripletSource {
    pub fn name(self) -> &'static str {
        match self {
            TripletSource::BatchAll => "batch_all",
            TripletSource::PreFormed => "pre_formed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "batch_all" => Ok(TripletSource::BatchAll),
            "pre_formed" => Ok(TripletSource::PreFormed),
            other => Err(config_err(format!("unknown triplet source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub interference: InterferenceConfig,
    pub noise: Option<NoiseConfig>,
    pub gamma: f64,
    pub tac_normalize: bool,
    pub triplet: TripletConfig,
    pub triplet_source: TripletSource,
    pub pk: PkSpec,
    /// Batch size outside PK mode: samples for `oim`/`cross_entropy`, triples for `pre_formed`.
    pub batch_size: usize,
    pub temperature: f64,
    pub label_smoothing: f64,
    pub lr: f64,
    pub lr_decay_start: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub seed: u64,
    /// Episodes used for the per-epoch accuracy columns.
    pub monitor: EpisodeSpec,
    pub stage2: Option<Box<TrainConfig>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Triplet,
            hidden: vec![64],
            embedding_dim: 16,
            activation: Activation::Relu,
            interference: InterferenceConfig::default(),
            noise: None,
            gamma: 0.5,
            tac_normalize: false,
            triplet: TripletConfig::default(),
            triplet_source: TripletSource::BatchAll,
            pk: PkSpec {
                classes: 20,
                per_class: 4,
            },
            batch_size: 64,
            temperature: 1.0,
            label_smoothing: 0.0,
            lr: 0.0002,
            lr_decay_start: 200,
            lr_decay_factor: 0.99,
            epochs: 300,
            iters_per_epoch: 100,
            seed: 0,
            monitor: EpisodeSpec {
                way: 5,
                shot: 1,
                queries: 10,
                episodes: 100,
            },
            stage2: None,
        }
    }
}

impl TrainConfig {
    /// Settings of the regularization experiments on
    /// [`GeneratorSpec::reproduce`](crate::datagen::GeneratorSpec::reproduce)
    /// data, with interference off.
    pub fn reproduce(seed: u64) -> Self {
        Self {
            lr: 0.01,
            epochs: 30,
            lr_decay_start: 30,
            seed,
            monitor: EpisodeSpec {
                episodes: 20,
                ..Self::default().monitor
            },
            ..Self::default()
        }
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            initial_rate: self.lr,
            decay_start_epoch: self.lr_decay_start,
            decay_factor_per_epoch: self.lr_decay_factor,
            total_epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(config_err("layer widths must be positive"));
        }
        self.interference.validate()?;
        if let Some(noise) = &self.noise {
            noise.validate()?;
            if self.interference.enabled {
                return Err(config_err("interference and gaussian noise are mutually exclusive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config_err(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        self.triplet.validate()?;
        if self.loss_mode == LossMode::Triplet && self.triplet_source == TripletSource::BatchAll {
            self.pk.validate()?;
        } else if self.batch_size == 0 {
            return Err(config_err("batch size must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(config_err("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config_err("label smoothing must lie in [0, 1)"));
        }
        self.lr_schedule().validate()?;
        if self.iters_per_epoch == 0 {
            return Err(config_err("iterations per epoch must be positive"));
        }
        let m = &self.monitor;
        if m.way < 2 || m.shot == 0 || m.queries == 0 || m.episodes == 0 {
            return Err(config_err("monitor episodes need way >= 2 and positive shot, queries, episodes"));
        }
        if let Some(stage2) = &self.stage2 {
            if stage2.stage2.is_some() {
                return Err(config_err("only two stages are supported"));
            }
            stage2.validate()?;
        }
        Ok(())
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub geometry: GeometryStats,
}

pub const LOG_HEADER: &str = "epoch,stage,lr,train_loss,train_acc,val_acc,center_dist,inter_intra_ratio";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.lr,
            self.train_loss,
            self.train_acc,
            self.val_acc,
            self.geometry.center_distance,
            fmt_opt(self.geometry.ratio)
        )
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub table: ClassTable,
    pub logs: Vec<EpochLog>,
}

/// Rows fed to one training step.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    /// Triplets over the rows, in triplet mode.
    pub triplets: Option<TripletIndexSet>,
}

/// Loss and gradients of one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub encoder_grads: ParamGrads,
    pub head_grads: Option<ParamGrads>,
    /// Raw (unperturbed) embeddings of the batch.
    pub embeddings: Array2<f64>,
}

/// Forward the batch, perturb it per `cfg`, evaluate the configured loss and
/// backpropagate. Perturbation draws come from `rng`; the class table is
/// read-only here.
pub fn step_objective<R: Rng + ?Sized>(
    model: &ModelParams,
    head: Option<&ModelParams>,
    table: &ClassTable,
    cfg: &TrainConfig,
    batch: &StepBatch,
    rng: &mut R,
) -> Result<StepOutput> {
    let (z, cache) = forward(model, &batch.x)?;
    let raw = EmbeddingBatch::new(z, batch.labels.clone())?;
    let anchors = match &batch.triplets {
        Some(set) => set.anchor_mask(raw.len()),
        None => vec![true; raw.len()],
    };
    let perturbed = match &cfg.noise {
        Some(noise) => perturb_batch_gaussian(
            &raw,
            table,
            noise,
            cfg.interference.lambda,
            cfg.interference.mode,
            &anchors,
            rng,
        )?,
        None => interfere_batch(&raw, table, &cfg.interference, &anchors, rng)?,
    };
    let n = raw.len() as f64;
    let mut head_grads = None;
    let (loss, grad_z) = match cfg.loss_mode {
        LossMode::Triplet => {
            let set = batch
                .triplets
                .as_ref()
                .ok_or_else(|| config_err("triplet mode needs a triplet set"))?;
            let every_slot = cfg.interference.mode == crate::interference::InterferenceMode::AllSamples;
            let ones = vec![1.0; raw.len()];
            let (others, other_scale) = if every_slot {
                (&perturbed.rows, &perturbed.grad_scale)
            } else {
                (&raw.rows, &ones)
            };
            let out = triplet_set_loss(&perturbed.rows, others, set, &cfg.triplet)?;
            (out.loss, out.raw_gradient(&perturbed.grad_scale, other_scale))
        }
        LossMode::Oim => {
            let mut grad = Array2::zeros(raw.rows.raw_dim());
            let mut total = 0.0;
            for i in 0..raw.len() {
                let (l, g) = oim_loss(
                    table,
                    perturbed.rows.row(i),
                    raw.labels[i],
                    cfg.temperature,
                    cfg.label_smoothing,
                )?;
                total += l;
                grad.row_mut(i).assign(&(g * (perturbed.grad_scale[i] / n)));
            }
            (total / n, grad)
        }
        LossMode::CrossEntropy => {
            let head = head.ok_or_else(|| config_err("cross-entropy mode needs a classifier head"))?;
            let classes = head.output_dim();
            let (logits, head_cache) = forward(head, &perturbed.rows)?;
            let mut grad_logits = Array2::zeros(logits.raw_dim());
            let mut total = 0.0;
            for i in 0..raw.len() {
                let target = label_smooth(raw.labels[i], classes, cfg.label_smoothing)?;
                let (l, g) = cross_entropy_with_grad(logits.row(i), target.view())?;
                total += l;
                grad_logits.row_mut(i).assign(&(g / n));
            }
            let (hg, mut grad) = backward_with_input(head, &head_cache, &grad_logits)?;
            for (i, mut row) in grad.axis_iter_mut(Axis(0)).enumerate() {
                row *= perturbed.grad_scale[i];
            }
            head_grads = Some(hg);
            (total / n, grad)
        }
    };
    let encoder_grads = backward(model, &cache, &grad_z)?;
    Ok(StepOutput {
        loss,
        encoder_grads,
        head_grads,
        embeddings: raw.rows,
    })
}

fn sample_step_batch<R: Rng + ?Sized>(ds: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<StepBatch> {
    let labels = ds.labels();
    match (cfg.loss_mode, cfg.triplet_source) {
        (LossMode::Triplet, TripletSource::BatchAll) => {
            let idx = pk_batch(ds, &cfg.pk, rng)?;
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let set = batch_all_triplets(&batch_labels);
            Ok(StepBatch {
                x: ds.rows(&idx),
                labels: batch_labels,
                triplets: Some(set),
            })
        }
        (LossMode::Triplet, TripletSource::PreFormed) => {
            let by_class = ds.indices_by_class();
            let eligible: Vec<usize> = (0..ds.class_count()).filter(|&c| by_class[c].len() >= 2).collect();
            if eligible.is_empty() || ds.class_count() < 2 {
                return Err(CirError::Data("no class has two samples to form a triplet".into()));
            }
            let mut idx = Vec::with_capacity(3 * cfg.batch_size);
            let mut triplets = Vec::with_capacity(cfg.batch_size);
            for t in 0..cfg.batch_size {
                let c = eligible[rng.random_range(0..eligible.len())];
                let pair = index::sample(rng, by_class[c].len(), 2);
                let neg_class = {
                    let d = rng.random_range(0..ds.class_count() - 1);
                    if d >= c {
                        d + 1
                    } else {
                        d
                    }
                };
                let members = &by_class[neg_class];
                let neg = members[rng.random_range(0..members.len())];
                idx.extend([by_class[c][pair.index(0)], by_class[c][pair.index(1)], neg]);
                triplets.push((3 * t, 3 * t + 1, 3 * t + 2));
            }
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let set = TripletIndexSet::new(triplets, &batch_labels)?;
            Ok(StepBatch {
                x: ds.rows(&idx),
                labels: batch_labels,
                triplets: Some(set),
            })
        }
        _ => {
            if cfg.batch_size > ds.len() {
                return Err(CirError::Data(format!(
                    "batch size {} exceeds {} training samples",
                    cfg.batch_size,
                    ds.len()
                )));
            }
            let idx = index::sample(rng, ds.len(), cfg.batch_size).into_vec();
            Ok(StepBatch {
                x: ds.rows(&idx),
                labels: idx.iter().map(|&i| labels[i]).collect(),
                triplets: None,
            })
        }
    }
}

// child stream ids derived from the run seed
const STREAM_BATCHES: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_ENCODER: u64 = 3;
const STREAM_TABLE: u64 = 4;
const STREAM_HEAD: u64 = 5;
const STREAM_VAL_EPISODES: u64 = 6;
const STREAM_TRAIN_EPISODES: u64 = 7;

fn check_splits(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if train.is_empty() {
        return Err(CirError::Data("training split is empty".into()));
    }
    if train.dim() != val.dim() {
        return Err(crate::error::shape_err("train and validation splits differ in dimension"));
    }
    if cfg.loss_mode == LossMode::Triplet && cfg.triplet_source == TripletSource::BatchAll {
        // surfaces the PK precondition before the first iteration
        pk_batch(train, &cfg.pk, &mut ChaCha8Rng::seed_from_u64(0))?;
    }
    Ok(())
}

/// Train one stage starting from `model`.
fn train_stage(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut model: ModelParams,
    stage: u8,
    epoch_offset: usize,
) -> Result<TrainOutcome> {
    let mut table = ClassTable::random(
        train.class_count(),
        cfg.embedding_dim,
        cfg.gamma,
        child_seed(cfg.seed, STREAM_TABLE),
    )?;
    if cfg.tac_normalize {
        table.normalize_rows();
    }
    let mut head = match cfg.loss_mode {
        LossMode::CrossEntropy => Some(init_params(
            &[cfg.embedding_dim, train.class_count()],
            Activation::Identity,
            child_seed(cfg.seed, STREAM_HEAD),
        )?),
        _ => None,
    };
    let mut batch_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, STREAM_BATCHES));
    let mut perturb_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, STREAM_PERTURB));
    let schedule = cfg.lr_schedule();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let rate = schedule.rate(epoch);
        let mut loss_sum = 0.0;
        for it in 0..cfg.iters_per_epoch {
            let iteration = epoch * cfg.iters_per_epoch + it;
            let batch = sample_step_batch(train, cfg, &mut batch_rng)?;
            let out = step_objective(&model, head.as_ref(), &table, cfg, &batch, &mut perturb_rng)?;
            if !out.loss.is_finite() || !out.encoder_grads.is_finite() {
                return Err(CirError::Diverged {
                    iteration,
                    detail: format!("loss {}", out.loss),
                });
            }
            loss_sum += out.loss;
            model = sgd_step(&model, &out.encoder_grads, rate).map_err(|e| diverged(iteration, e))?;
            if let (Some(h), Some(g)) = (head.as_mut(), out.head_grads.as_ref()) {
                *h = sgd_step(h, g, rate).map_err(|e| diverged(iteration, e))?;
            }
            let raw = EmbeddingBatch::new(out.embeddings, batch.labels)?;
            table.update(&class_means(&raw))?;
            if cfg.tac_normalize {
                table.normalize_rows();
            }
        }
        let (train_acc, val_acc, geometry) = epoch_metrics(&model, head.as_ref(), &table, train, val, cfg)?;
        logs.push(EpochLog {
            epoch: epoch_offset + epoch,
            stage,
            lr: rate,
            train_loss: loss_sum / cfg.iters_per_epoch as f64,
            train_acc,
            val_acc,
            geometry,
        });
    }
    Ok(TrainOutcome { model, table, logs })
}

fn diverged(iteration: usize, e: CirError) -> CirError {
    CirError::Diverged {
        iteration,
        detail: e.to_string(),
    }
}

fn epoch_metrics(
    model: &ModelParams,
    head: Option<&ModelParams>,
    table: &ClassTable,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(f64, f64, GeometryStats)> {
    let (train_z, _) = forward(model, &train.all_rows())?;
    let (val_z, _) = forward(model, &val.all_rows())?;
    let val_acc = episodic_accuracy_on(&val_z, val, &cfg.monitor, child_seed(cfg.seed, STREAM_VAL_EPISODES))?.mean;
    let train_acc = match cfg.loss_mode {
        LossMode::Triplet => {
            episodic_accuracy_on(&train_z, train, &cfg.monitor, child_seed(cfg.seed, STREAM_TRAIN_EPISODES))?.mean
        }
        LossMode::Oim => table_accuracy(table, &train_z, train.labels(), cfg.temperature)?,
        LossMode::CrossEntropy => {
            let head = head.expect("cross-entropy runs carry a head");
            let (logits, _) = forward(head, &train_z)?;
            let hits = (0..train.len())
                .filter(|&i| argmax(logits.row(i)) == train.labels()[i])
                .count();
            hits as f64 / train.len() as f64
        }
    };
    let geometry = geometry_stats(&EmbeddingBatch::new(val_z, val.labels().to_vec())?)?;
    Ok((train_acc, val_acc, geometry))
}

/// Fraction of rows whose highest table score is their own class.
pub fn table_accuracy(table: &ClassTable, z: &Array2<f64>, labels: &[usize], temperature: f64) -> Result<f64> {
    let mut hits = 0;
    for (i, &label) in labels.iter().enumerate() {
        if argmax(oim_scores(table, z.row(i), temperature)?.view()) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Train from scratch per `cfg` (single stage).
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_splits(train, val, cfg)?;
    let model = init_params(
        &cfg.layer_dims(train.dim()),
        cfg.activation,
        child_seed(cfg.seed, STREAM_ENCODER),
    )?;
    train_stage(train, val, cfg, model, 1, 0)
}

/// Cross-entropy pretraining of encoder and head, then triplet training of
/// the encoder with a fresh class table. Logs run on across both stages.
pub fn train_two_stage(train_ds: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stage2 = cfg
        .stage2
        .as_deref()
        .ok_or_else(|| config_err("two-stage training needs a [stage2] section"))?;
    if cfg.loss_mode != LossMode::CrossEntropy || stage2.loss_mode != LossMode::Triplet {
        return Err(config_err("two-stage training runs cross_entropy, then triplet"));
    }
    if stage2.hidden != cfg.hidden || stage2.embedding_dim != cfg.embedding_dim || stage2.activation != cfg.activation {
        return Err(config_err("both stages must share the encoder architecture"));
    }
    check_splits(train_ds, val, cfg)?;
    check_splits(train_ds, val, stage2)?;
    let stage1_cfg = TrainConfig {
        stage2: None,
        ..cfg.clone()
    };
    let first = train(train_ds, val, &stage1_cfg)?;
    let second = train_stage(train_ds, val, stage2, first.model, 2, cfg.epochs)?;
    let mut logs = first.logs;
    logs.extend(second.logs);
    Ok(TrainOutcome {
        model: second.model,
        table: second.table,
        logs,
    })
}

/// `train_two_stage` when `cfg` has a second stage, otherwise `train`.
pub fn run(train_ds: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.stage2.is_some() {
        train_two_stage(train_ds, val, cfg)
    } else {
        train(train_ds, val, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Episodic,
    Retrieval,
    Classification,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Episodic => "episodic",
            Protocol::Retrieval => "retrieval",
            Protocol::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "episodic" => Ok(Protocol::Episodic),
            "retrieval" => Ok(Protocol::Retrieval),
            "classification" => Ok(Protocol::Classification),
            other => Err(config_err(format!("unknown protocol `{other}`"))),
        }
    }
}

/// One metric with an optional 95% confidence half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// `metric,value,ci95` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,ci95\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.metric, r.value, fmt_opt(r.ci95)));
        }
        out
    }
}

/// Evaluate a trained encoder (and table) under one protocol.
///
/// * episodic: nearest-prototype accuracy on `eval_split`.
/// * retrieval: on `eval_split`, the first sample of each class is its query
///   and every other sample forms the gallery.
/// * classification: table-score argmax over `eval_split`, whose classes must
///   be the table's classes.
pub fn evaluate_checkpoint(
    model: &ModelParams,
    table: &ClassTable,
    eval_split: &Dataset,
    protocol: Protocol,
    episodes: &EpisodeSpec,
    seed: u64,
) -> Result<MetricReport> {
    if eval_split.dim() != model.input_dim() {
        return Err(crate::error::shape_err(format!(
            "checkpoint expects {} input features, dataset has {}",
            model.input_dim(),
            eval_split.dim()
        )));
    }
    let (z, _) = forward(model, &eval_split.all_rows())?;
    let mut report = MetricReport::default();
    match protocol {
        Protocol::Episodic => {
            let r = episodic_accuracy_on(&z, eval_split, episodes, seed)?;
            report.rows.push(MetricRow {
                metric: format!("accuracy_{}way_{}shot", episodes.way, episodes.shot),
                value: r.mean,
                ci95: Some(r.half_width),
            });
        }
        Protocol::Retrieval => {
            let mut query_idx = Vec::new();
            let mut gallery_idx = Vec::new();
            for members in eval_split.indices_by_class() {
                query_idx.push(members[0]);
                gallery_idx.extend(&members[1..]);
            }
            let pick = |idx: &[usize]| {
                EmbeddingBatch::new(
                    z.select(Axis(0), idx),
                    idx.iter().map(|&i| eval_split.labels()[i]).collect(),
                )
            };
            let (queries, gallery) = (pick(&query_idx)?, pick(&gallery_idx)?);
            report.rows.push(MetricRow {
                metric: "mAP".into(),
                value: retrieval_map(&queries, &gallery, Metric::Euclidean)?,
                ci95: None,
            });
            report.rows.push(MetricRow {
                metric: "rank1".into(),
                value: cmc_rank1(&queries, &gallery, Metric::Euclidean)?,
                ci95: None,
            });
        }
        Protocol::Classification => {
            if table.class_count() != eval_split.class_count() || table.dim() != model.output_dim() {
                return Err(config_err(format!(
                    "classification needs the table's {} classes, split has {}",
                    table.class_count(),
                    eval_split.class_count()
                )));
            }
            report.rows.push(MetricRow {
                metric: "accuracy".into(),
                value: table_accuracy(table, &z, eval_split.labels(), 1.0)?,
                ci95: None,
            });
        }
    }
    Ok(report)
}

/// Geometry of the embeddings of every split.
pub fn split_geometry(model: &ModelParams, splits: &DataSplits) -> Result<[GeometryStats; 3]> {
    let stats = |ds: &Dataset| -> Result<GeometryStats> {
        let (z, _) = forward(model, &ds.all_rows())?;
        geometry_stats(&EmbeddingBatch::new(z, ds.labels().to_vec())?)
    };
    Ok([stats(&splits.train)?, stats(&splits.val)?, stats(&splits.test)?])
}

/// Mean of the raw embeddings of each class, as a table row source.
pub fn embedding_class_means(model: &ModelParams, ds: &Dataset) -> Result<Array2<f64>> {
    let (z, _) = forward(model, &ds.all_rows())?;
    let means = class_means(&EmbeddingBatch::new(z, ds.labels().to_vec())?);
    let mut out = Array2::zeros((ds.class_count(), model.output_dim()));
    for (c, m) in means {
        out.row_mut(c).assign(&m);
    }
    Ok(out)
}
