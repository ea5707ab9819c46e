use amber_core::corpus::dataset::Dataset;
use amber_core::corpus::{derive_rng, CorpusConfig};
use amber_core::encoder::{Encoder, ModelConfig};
use amber_core::eval::{random_probe_transfer, retrieval_accuracy, zero_shot_tag_transfer, ProbeConfig, TAG_CLASSES};

fn corpus(held_out: usize) -> CorpusConfig {
    let mut c = CorpusConfig::default();
    for l in &mut c.languages {
        l.mono = 40;
        l.parallel = if l.parallel > 0 { 20 } else { 0 };
    }
    c.held_out = held_out;
    c.probe_train = 200;
    c
}

fn untrained(data: &Dataset, seed: u64) -> Encoder<f32> {
    let cfg = ModelConfig {
        vocab_size: data.vocab.size(),
        ..ModelConfig::default()
    };
    Encoder::new(cfg, &mut derive_rng(seed, &["init"])).unwrap()
}

#[test]
fn untrained_retrieval_is_near_chance() {
    for seed in 1..=3 {
        let data = Dataset::generate(&corpus(128), seed).unwrap();
        let report = retrieval_accuracy(&untrained(&data, seed), &data.held_out, &data.vocab).unwrap();
        for p in &report.pairs {
            assert_eq!(p.score.total, 128);
            assert!(p.score.accuracy <= 0.06, "seed {seed} {}: {}", p.source, p.score.accuracy);
        }
    }
}

#[test]
fn random_probe_on_untrained_model_is_near_chance() {
    let seeds = 1..=12u64;
    let data = Dataset::generate(&corpus(40), 1).unwrap();
    let enc = untrained(&data, 1);
    let mut per_language = vec![0.0; data.held_out.len()];
    for seed in seeds.clone() {
        let r = random_probe_transfer(&enc, &data, seed).unwrap();
        for (acc, t) in per_language.iter_mut().zip(&r.targets) {
            *acc += t.accuracy;
        }
    }
    let chance = 1.0 / TAG_CLASSES as f64;
    for acc in per_language {
        let mean = acc / seeds.clone().count() as f64;
        assert!((mean - chance).abs() <= 0.05, "{mean}");
    }
}

#[test]
fn probe_on_its_own_language_keeps_held_in_accuracy() {
    let data = Dataset::generate(&corpus(100), 2).unwrap();
    let r = zero_shot_tag_transfer(&untrained(&data, 2), &data, &ProbeConfig::default()).unwrap();
    assert!(r.source_accuracy >= r.held_in_accuracy - 0.02, "{} vs {}", r.source_accuracy, r.held_in_accuracy);
    assert!(r.targets.iter().all(|t| (0.0..=1.0).contains(&t.accuracy)));
}
