mod common;

use amber_core::corpus::{encode_pair, Sentence};
use amber_core::encoder::{Encoder, MaskRegime, ModelConfig};
use common::{leakage, raw_pair, separate_gap, toy_data, toy_encoder};

#[test]
fn swapping_a_token_never_reaches_protected_rows() {
    let data = toy_data(3);
    for seed in [1, 2] {
        let enc = toy_encoder(data.vocab.size(), seed);
        let (worst, swapped) = leakage(&enc, &data.vocab, 6, seed);
        assert!(worst < 1e-9, "seed {seed}: leaked {worst:e}");
        assert!(swapped > 1e-3, "seed {seed}: swap left its own row unchanged ({swapped:e})");
    }
}

#[test]
fn source_side_matches_separate_encoding() {
    let data = toy_data(3);
    let enc = toy_encoder(data.vocab.size(), 5);
    let gap = separate_gap(&enc, &data.vocab, 6, 5);
    assert!(gap < 1e-6, "{gap:e}");
}

#[test]
fn target_rows_never_look_at_themselves_or_later() {
    let data = toy_data(3);
    let enc = toy_encoder(data.vocab.size(), 9);
    let x = Sentence { lang: 0, tokens: vec![1, 2, 3] };
    let y = Sentence { lang: 1, tokens: vec![4, 5, 6, 7] };
    let input = encode_pair(&raw_pair(x, y), &data.vocab, MaskRegime::Tgt2Src, 32).unwrap();
    let out = enc.forward(&input).unwrap();
    let ys = input.y_span.clone().unwrap();
    for layer in &out.attention {
        for head in layer {
            for i in ys.clone() {
                for j in i..ys.end {
                    assert_eq!(head.at(i, j), 0.0);
                }
            }
        }
    }
}

#[test]
fn single_token_attends_to_itself_fully() {
    let cfg = ModelConfig {
        vocab_size: 8,
        max_positions: 4,
        ..ModelConfig::default()
    };
    let enc = Encoder::<f64>::new(cfg, &mut amber_core::corpus::derive_rng(0, &["init"])).unwrap();
    let input = amber_core::encoder::EncoderInput {
        tokens: vec![5],
        segments: vec![0],
        positions: vec![0],
        mask: amber_core::encoder::build_mask(MaskRegime::Separate, 1, 0).unwrap(),
        regime: MaskRegime::Separate,
        x_span: 0..1,
        y_span: None,
    };
    let out = enc.forward(&input).unwrap();
    for layer in &out.attention {
        for head in layer {
            assert_eq!(head.data(), &[1.0]);
        }
    }
}
