mod common;

use amber_core::corpus::derive_rng;
use amber_core::encoder::{Encoder, ModelConfig};
use amber_core::objectives::{LossContext, ObjectiveWeights, Objectives, DEFAULT_MASK_RATE};
use amber_core::tensor::{Graph, Precision};
use amber_core::trainer::{read_checkpoint, write_checkpoint, TrainConfig, TrainState, TrainingData};
use common::{objective_loss, parallel_batch, toy_data, toy_encoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        layers: 2,
        heads: 2,
        hidden: 32,
        ffn_dim: 64,
        max_positions: 32,
        ..ModelConfig::default()
    }
}

fn state(data: &TrainingData, cfg: TrainConfig, seed: u64) -> TrainState<f32> {
    let enc = Encoder::new(model(data.vocab.size()), &mut derive_rng(seed, &["init"])).unwrap();
    TrainState::new(enc, cfg, seed).unwrap()
}

fn short(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        warmup_steps: steps / 10,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

fn run<T: amber_core::tensor::Scalar>(s: &mut TrainState<T>, data: &TrainingData) -> Vec<f64> {
    let mut totals = Vec::new();
    s.run(data, |_, r| {
        totals.push(r.total);
        Ok(())
    })
    .unwrap();
    totals
}

#[test]
fn same_seed_gives_identical_breakdowns() {
    let data = toy_data(4).training_data();
    let mut a = state(&data, short(50), 7);
    let mut b = state(&data, short(50), 7);
    let la: Vec<_> = (0..50).map(|_| a.train_step(&data).unwrap().0).collect();
    let lb: Vec<_> = (0..50).map(|_| b.train_step(&data).unwrap().0).collect();
    assert_eq!(la, lb);
    assert_eq!(a.encoder, b.encoder);
}

#[test]
fn first_step_has_zero_learning_rate() {
    let data = toy_data(4).training_data();
    let mut s = state(&data, short(20), 7);
    let before = s.encoder.clone();
    let (_, lr) = s.train_step(&data).unwrap();
    assert_eq!(lr, 0.0);
    assert_eq!(s.encoder.params(), before.params());
}

#[test]
fn loss_falls_over_300_steps() {
    let data = toy_data(4).training_data();
    let mut s = state(&data, short(300), 2);
    let totals = run(&mut s, &data);
    let head: f64 = totals[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = totals[280..].iter().sum::<f64>() / 20.0;
    assert!(totals[299] < totals[0], "{} !< {}", totals[299], totals[0]);
    assert!(tail < head, "{tail} !< {head}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = toy_data(4).training_data();
    let mut whole = state(&data, short(100), 3);
    run(&mut whole, &data);

    let mut first = state(&data, short(100), 3);
    for _ in 0..50 {
        first.train_step(&data).unwrap();
    }
    let mut resumed: TrainState<f32> = read_checkpoint(&write_checkpoint(&first)).unwrap();
    run(&mut resumed, &data);
    assert_eq!(resumed, whole);
}

#[test]
fn infinite_clip_is_a_no_op() {
    let data = toy_data(4).training_data();
    let mut a = state(&data, TrainConfig { clip_norm: None, ..short(30) }, 5);
    let mut b = state(&data, TrainConfig { clip_norm: Some(f64::INFINITY), ..short(30) }, 5);
    run(&mut a, &data);
    run(&mut b, &data);
    assert_eq!(a.encoder, b.encoder);
}

#[test]
fn disabled_objectives_report_exact_zeros() {
    let data = toy_data(4).training_data();
    for (flags, parallel_used) in [("mlm", false), ("mlm,tlm", true)] {
        let cfg = TrainConfig {
            objectives: flags.parse().unwrap(),
            ..short(10)
        };
        let mut s = state(&data, cfg, 1);
        let batch = s.sample(&data).unwrap();
        assert_eq!(batch.parallel_count() > 0, parallel_used, "{flags}");
        for _ in 0..10 {
            let (b, _) = s.train_step(&data).unwrap();
            assert_eq!((b.sa, b.wa), (0.0, 0.0), "{flags}");
            assert!(b.mlm > 0.0);
        }
    }
}

#[test]
fn total_is_the_sum_of_isolated_terms() {
    let data = toy_data(6);
    let enc = toy_encoder(data.vocab.size(), 6);
    let batch = parallel_batch(&data, 2);
    let value = |o: &str| {
        let mut g = Graph::new();
        let b = enc.bind(&mut g);
        let l = objective_loss(&enc, &data.vocab, o.parse().unwrap(), &batch, 11, &mut g, &b).unwrap();
        g.value(l).item()
    };
    let total = value("mlm,tlm,wa,sa");
    let parts = value("tlm") + value("wa") + value("sa");
    assert!((total - parts).abs() < 1e-6, "{total} vs {parts}");
}

#[test]
fn zeroed_head_predicts_uniformly() {
    let data = toy_data(6);
    let mut enc = toy_encoder(data.vocab.size(), 6);
    enc.zero_mlm_head();
    let ctx = LossContext {
        encoder: &enc,
        vocab: &data.vocab,
        objectives: Objectives { tlm: false, wa: false, sa: false, ..Objectives::ALL },
        weights: ObjectiveWeights::default(),
        mask_rate: DEFAULT_MASK_RATE,
    };
    let batch = common::mono_batch(&data, 3);
    let mut g = Graph::new();
    let b = enc.bind(&mut g);
    let (_, breakdown) = ctx
        .combined_loss(&mut g, &b, &batch, &mut ChaCha8Rng::seed_from_u64(1), None)
        .unwrap();
    let expected = (data.vocab.size() as f64).ln();
    assert!((breakdown.mlm - expected).abs() < 1e-9, "{} vs {expected}", breakdown.mlm);
}

#[test]
fn f64_training_runs_under_the_test_precision() {
    let data = toy_data(4).training_data();
    let cfg = ModelConfig {
        precision: Precision::Test64,
        ..model(data.vocab.size())
    };
    let enc = Encoder::<f64>::new(cfg, &mut derive_rng(1, &["init"])).unwrap();
    let mut s = TrainState::new(enc, short(5), 1).unwrap();
    assert_eq!(run(&mut s, &data).len(), 5);
}
