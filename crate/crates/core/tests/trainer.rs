use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cir_core::datagen::{gen_gaussian_mixture, Dataset, GeneratorSpec, Nonlinearity};
use cir_core::eval::{episodic_accuracy_on, EpisodeSpec};
use cir_core::interference::NoiseConfig;
use cir_core::nn::{forward, grad_check, init_params, Activation};
use cir_core::reproduce::seed_splits;
use cir_core::sampling::PkSpec;
use cir_core::tac::ClassTable;
use cir_core::trainer::{
    evaluate_checkpoint, step_objective, train, train_two_stage, LossMode, Protocol, StepBatch, TrainConfig,
    TripletSource,
};
use cir_core::CirError;

fn tiny_separable() -> Dataset {
    gen_gaussian_mixture(&GeneratorSpec {
        classes: 4,
        per_class: 10,
        dim: 6,
        spread: 0.05,
        center_scale: 3.0,
        nonlinearity: Nonlinearity::None,
        label_noise: 0.0,
        seed: 21,
    })
    .unwrap()
}

fn quick(mode: LossMode) -> TrainConfig {
    TrainConfig {
        loss_mode: mode,
        hidden: vec![16],
        embedding_dim: 4,
        pk: PkSpec {
            classes: 4,
            per_class: 4,
        },
        batch_size: 16,
        lr: 0.01,
        epochs: 50,
        lr_decay_start: 50,
        iters_per_epoch: 20,
        monitor: EpisodeSpec {
            way: 2,
            shot: 1,
            queries: 3,
            episodes: 10,
        },
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_triplet_loss_falls_below_tenth_of_margin() {
    let ds = tiny_separable();
    let cfg = quick(LossMode::Triplet);
    let out = train(&ds, &ds, &cfg).unwrap();
    let last = out.logs.last().unwrap();
    assert!(
        last.train_loss < cfg.triplet.margin / 10.0,
        "final loss {}",
        last.train_loss
    );
    assert_eq!(out.logs.len(), 50);
    assert!(out.logs.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
}

#[test]
fn oim_and_cross_entropy_learn_the_training_classes() {
    let ds = tiny_separable();
    for mode in [LossMode::Oim, LossMode::CrossEntropy] {
        let mut cfg = quick(mode);
        cfg.interference.enabled = true;
        // unnormalized table rows chase the growing embeddings in oim mode
        cfg.tac_normalize = mode == LossMode::Oim;
        cfg.epochs = 20;
        let out = train(&ds, &ds, &cfg).unwrap();
        let (first, last) = (&out.logs[0], out.logs.last().unwrap());
        assert!(last.train_loss < first.train_loss, "{mode:?}");
        assert!(last.train_acc > 0.95, "{mode:?} train acc {}", last.train_acc);
        for l in &out.logs {
            assert!(l.train_loss.is_finite() && l.val_acc.is_finite());
        }
    }
}

#[test]
fn pre_formed_triplets_train() {
    let ds = tiny_separable();
    let mut cfg = quick(LossMode::Triplet);
    cfg.triplet_source = TripletSource::PreFormed;
    cfg.interference.enabled = true;
    // with four classes a lambda of 0.5 often puts the anchor midway to the negative
    cfg.interference.lambda = 0.3;
    cfg.epochs = 20;
    let out = train(&ds, &ds, &cfg).unwrap();
    let last = out.logs.last().unwrap().train_loss;
    assert!(last <= out.logs[0].train_loss && last < cfg.triplet.margin / 10.0, "{last}");
}

#[test]
fn identical_runs_identical_logs() {
    let ds = tiny_separable();
    let mut cfg = quick(LossMode::Triplet);
    cfg.epochs = 5;
    cfg.interference.enabled = true;
    assert_eq!(train(&ds, &ds, &cfg).unwrap(), train(&ds, &ds, &cfg).unwrap());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(train(&ds, &ds, &cfg).unwrap().model, train(&ds, &ds, &other).unwrap().model);
}

#[test]
fn interference_does_not_shift_the_batch_stream() {
    // with lambda = 0 the extra class draws come from their own stream
    let ds = tiny_separable();
    let mut off = quick(LossMode::Oim);
    off.epochs = 4;
    off.interference.lambda = 0.0;
    let mut on = off.clone();
    on.interference.enabled = true;
    assert_eq!(train(&ds, &ds, &off).unwrap(), train(&ds, &ds, &on).unwrap());
}

#[test]
fn divergence_reports_iteration() {
    // unnormalized oim at a high rate runs away
    let ds = tiny_separable();
    let mut cfg = quick(LossMode::Oim);
    cfg.lr = 0.05;
    cfg.interference.enabled = true;
    match train(&ds, &ds, &cfg) {
        Err(e @ CirError::Diverged { .. }) => {
            assert_eq!(e.exit_code(), 4);
            let CirError::Diverged { iteration, .. } = e else { unreachable!() };
            assert!(iteration > 0 && iteration < cfg.epochs * cfg.iters_per_epoch, "{iteration}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_violations_are_rejected_up_front() {
    let ds = tiny_separable();
    let mut both = quick(LossMode::Triplet);
    both.interference.enabled = true;
    both.noise = Some(NoiseConfig {
        sigma: 0.1,
        norm_matched: false,
    });
    assert!(matches!(train(&ds, &ds, &both), Err(CirError::Config(_))));

    let mut big_pk = quick(LossMode::Triplet);
    big_pk.pk.per_class = 11;
    assert!(matches!(train(&ds, &ds, &big_pk), Err(CirError::Data(_))));

    let mut gamma = quick(LossMode::Triplet);
    gamma.gamma = 1.5;
    assert!(matches!(train(&ds, &ds, &gamma), Err(CirError::Config(_))));
}

#[test]
fn normalized_table_rows_stay_unit_norm() {
    let ds = tiny_separable();
    let mut cfg = quick(LossMode::Oim);
    cfg.tac_normalize = true;
    cfg.interference.enabled = true;
    cfg.epochs = 5;
    let out = train(&ds, &ds, &cfg).unwrap();
    for row in out.table.rows().rows() {
        assert!(row.iter().all(|v| v.is_finite()));
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-5);
    }
}

fn two_stage_cfg(stage2_epochs: usize) -> TrainConfig {
    let mut s1 = quick(LossMode::CrossEntropy);
    s1.epochs = 5;
    let mut s2 = quick(LossMode::Triplet);
    s2.epochs = stage2_epochs;
    s2.interference.enabled = true;
    s1.stage2 = Some(Box::new(s2));
    s1
}

#[test]
fn empty_second_stage_keeps_first_stage_encoder() {
    let ds = tiny_separable();
    let cfg = two_stage_cfg(0);
    let both = train_two_stage(&ds, &ds, &cfg).unwrap();
    let first = train(&ds, &ds, &TrainConfig { stage2: None, ..cfg.clone() }).unwrap();
    assert_eq!(both.model, first.model);
    assert!(both.logs.iter().all(|l| l.stage == 1));
}

#[test]
fn stage_markers_form_one_block_each() {
    let ds = tiny_separable();
    let out = train_two_stage(&ds, &ds, &two_stage_cfg(3)).unwrap();
    let stages: Vec<u8> = out.logs.iter().map(|l| l.stage).collect();
    assert_eq!(stages, vec![1, 1, 1, 1, 1, 2, 2, 2]);
    assert_eq!(out.logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    assert_eq!(out.table.class_count(), ds.class_count());
}

#[test]
fn two_stage_requires_cross_entropy_then_triplet() {
    let ds = tiny_separable();
    let mut cfg = two_stage_cfg(1);
    cfg.loss_mode = LossMode::Triplet;
    assert!(matches!(train_two_stage(&ds, &ds, &cfg), Err(CirError::Config(_))));
    assert!(matches!(
        train_two_stage(&ds, &ds, &quick(LossMode::CrossEntropy)),
        Err(CirError::Config(_))
    ));
}

#[test]
fn two_stage_beats_one_stage_on_reproduce_data() {
    let spec = EpisodeSpec {
        way: 5,
        shot: 1,
        queries: 10,
        episodes: 600,
    };
    let (mut one, mut two) = (0.0, 0.0);
    for seed in 1..=5 {
        let splits = seed_splits(seed).unwrap();
        let mut single = TrainConfig::reproduce(seed);
        single.interference.enabled = true;
        let mut first = single.clone();
        first.loss_mode = LossMode::CrossEntropy;
        first.interference.enabled = false;
        first.epochs = 10;
        first.lr = 0.05;
        first.lr_decay_start = 10;
        first.stage2 = Some(Box::new(single.clone()));
        let acc = |m: &cir_core::ModelParams| {
            let (z, _) = forward(m, &splits.val.all_rows()).unwrap();
            episodic_accuracy_on(&z, &splits.val, &spec, seed).unwrap().mean
        };
        one += acc(&train(&splits.train, &splits.val, &single).unwrap().model);
        two += acc(&train_two_stage(&splits.train, &splits.val, &first).unwrap().model);
    }
    assert!(two >= one, "two-stage {} vs one-stage {}", two / 5.0, one / 5.0);
}

#[test]
fn cross_entropy_head_gradient() {
    let mut cfg = TrainConfig {
        loss_mode: LossMode::CrossEntropy,
        hidden: vec![5],
        embedding_dim: 3,
        activation: Activation::Tanh,
        label_smoothing: 0.2,
        ..TrainConfig::default()
    };
    cfg.interference.enabled = true;
    let model = init_params(&[4, 5, 3], Activation::Tanh, 1).unwrap();
    let head = init_params(&[3, 4], Activation::Identity, 2).unwrap();
    let table = ClassTable::random(4, 3, 0.5, 3).unwrap();
    let x = ndarray::Array2::from_shape_fn((8, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let batch = StepBatch {
        x,
        labels: vec![0, 1, 2, 3, 0, 1, 2, 3],
        triplets: None,
    };
    let worst = grad_check(
        &head,
        |h| {
            let out = step_objective(&model, Some(h), &table, &cfg, &batch, &mut ChaCha8Rng::seed_from_u64(4))?;
            Ok((out.loss, out.head_grads.unwrap()))
        },
        1e-5,
    )
    .unwrap();
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn evaluation_protocols() {
    let sep = gen_gaussian_mixture(&GeneratorSpec::separable(2)).unwrap();
    let model = init_params(&[8, 16, 8], Activation::Relu, 77).unwrap();
    let table = ClassTable::random(sep.class_count(), 8, 0.5, 1).unwrap();
    let spec = EpisodeSpec {
        way: 5,
        shot: 1,
        queries: 5,
        episodes: 50,
    };
    let ep = evaluate_checkpoint(&model, &table, &sep, Protocol::Episodic, &spec, 3).unwrap();
    assert_eq!(ep.rows.len(), 1);
    assert_eq!(ep.rows[0].value, 1.0);
    assert!(ep.rows[0].ci95.is_some());

    let rt = evaluate_checkpoint(&model, &table, &sep, Protocol::Retrieval, &spec, 3).unwrap();
    assert!(rt.get("mAP").is_some() && rt.get("rank1").is_some());
    assert!(rt.to_csv().starts_with("metric,value,ci95\n"));

    let small = ClassTable::random(3, 8, 0.5, 1).unwrap();
    assert!(matches!(
        evaluate_checkpoint(&model, &small, &sep, Protocol::Classification, &spec, 3),
        Err(CirError::Config(_))
    ));
    let wrong_dim = init_params(&[5, 8], Activation::Relu, 1).unwrap();
    assert!(evaluate_checkpoint(&wrong_dim, &table, &sep, Protocol::Episodic, &spec, 3).is_err());
}
