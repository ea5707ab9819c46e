#![allow(dead_code)]

use amber_core::corpus::dataset::Dataset;
use amber_core::corpus::{
    derive_rng, encode_pair, encode_sentence, Batch, CorpusConfig, Origin, Sentence, SentencePair, Vocabulary,
};
use amber_core::encoder::{Bound, Encoder, MaskRegime, ModelConfig};
use amber_core::objectives::{LossContext, ObjectiveWeights, Objectives, DEFAULT_MASK_RATE};
use amber_core::tensor::{Graph, Precision, Tensor, Var};
use amber_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Smallest gradient a central difference can resolve to `REL_TOL` when the
/// loss itself is only known to one ulp. Below it, relative error measures
/// rounding in the difference rather than the backward pass.
pub fn fd_floor(loss: f64) -> f64 {
    f64::EPSILON * loss.abs().max(1.0) / (FD_STEP * REL_TOL)
}

/// Element-wise relative error with the denominator floored at `floor`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn small_corpus() -> CorpusConfig {
    let mut c = CorpusConfig::default();
    c.concepts = 8;
    for l in &mut c.languages {
        l.mono = 20;
        l.parallel = if l.parallel > 0 { 12 } else { 0 };
    }
    c.held_out = 4;
    c.probe_train = 4;
    c
}

/// The toy shape used by the gradient and mask checks.
pub fn toy_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        layers: 2,
        heads: 2,
        hidden: 32,
        ffn_dim: 64,
        max_positions: 32,
        dropout: 0.0,
        tie_embeddings: true,
        precision: Precision::Test64,
    }
}

/// A 64-bit toy encoder whose parameters are redrawn at unit-ish scale so
/// every gradient is comfortably above the finite-difference noise floor.
pub fn toy_encoder(vocab_size: usize, seed: u64) -> Encoder<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::<f64>::new(toy_model(vocab_size), &mut rng).unwrap();
    let names: Vec<String> = enc.params().names().to_vec();
    let normal = Normal::new(0.0, 0.3).unwrap();
    for (name, t) in names.iter().zip(enc.params_mut().tensors_mut()) {
        let gain = name.ends_with(".gain");
        for v in t.data_mut() {
            *v = if gain { 1.0 + normal.sample(&mut rng) * 0.3 } else { normal.sample(&mut rng) };
        }
    }
    enc
}

pub fn toy_data(seed: u64) -> Dataset {
    Dataset::generate(&small_corpus(), seed).unwrap()
}

pub fn mono_batch(d: &Dataset, n: usize) -> Batch {
    let m = &d.mono[1];
    let pairs = (0..n).map(|k| m.pair(k)).collect();
    Batch {
        pairs,
        origins: (0..n).map(|k| Origin::Mono { corpus: 1, index: k }).collect(),
    }
}

pub fn parallel_batch(d: &Dataset, n: usize) -> Batch {
    let pairs: Vec<SentencePair> = (0..n).map(|k| d.parallel[k % d.parallel.len()].pairs[k].clone()).collect();
    Batch {
        pairs,
        origins: (0..n)
            .map(|k| Origin::Parallel {
                corpus: k % d.parallel.len(),
                index: k,
            })
            .collect(),
    }
}

/// Value of one objective on a fixed batch, built on `graph`.
pub fn objective_loss(
    enc: &Encoder<f64>,
    vocab: &Vocabulary,
    objectives: Objectives,
    batch: &Batch,
    mask_seed: u64,
    graph: &mut Graph<f64>,
    bound: &Bound,
) -> Result<Var> {
    let ctx = LossContext {
        encoder: enc,
        vocab,
        objectives,
        weights: ObjectiveWeights::default(),
        mask_rate: DEFAULT_MASK_RATE,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    Ok(ctx.combined_loss(graph, bound, batch, &mut rng, None)?.0)
}

pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
    pub worst: String,
}

/// Compares backprop against central differences on a sample of parameter
/// coordinates: the largest-gradient entry of every tensor plus `extra`
/// random entries.
pub fn check_param_grads(
    enc: &Encoder<f64>,
    extra: usize,
    seed: u64,
    loss: impl Fn(&Encoder<f64>, &mut Graph<f64>, &Bound) -> Result<Var>,
) -> GradReport {
    let value = |e: &Encoder<f64>| {
        let mut g = Graph::new();
        let b = e.bind(&mut g);
        let l = loss(e, &mut g, &b).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let bound = enc.bind(&mut g);
    let l = loss(enc, &mut g, &bound).unwrap();
    let floor = fd_floor(g.value(l).item());
    let grads = g.backward(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        max_rel: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for (k, (&var, t)) in bound.vars().iter().zip(enc.params().tensors()).enumerate() {
        let zero = Tensor::zeros(t.shape());
        let analytic = grads.get(var).unwrap_or(&zero);
        let n = t.numel();
        let mut coords: Vec<usize> = (0..extra).map(|_| rng.random_range(0..n)).collect();
        let biggest = (0..n)
            .max_by(|&a, &b| analytic.data()[a].abs().total_cmp(&analytic.data()[b].abs()))
            .unwrap();
        coords.push(biggest);
        for i in coords {
            let mut plus = enc.clone();
            plus.params_mut().tensors_mut()[k].data_mut()[i] += FD_STEP;
            let mut minus = enc.clone();
            minus.params_mut().tensors_mut()[k].data_mut()[i] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let e = rel_err(a, numeric, floor);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", enc.params().names()[k]);
            }
        }
    }
    report
}

/// Largest relative gradient error of the three objectives over `seeds`.
pub fn objective_grad_errors(seeds: &[u64]) -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let only = |mlm, tlm, wa, sa| Objectives { mlm, tlm, wa, sa };
    for &seed in seeds {
        let data = toy_data(seed);
        let enc = toy_encoder(data.vocab.size(), seed);
        let cases = [
            ("mlm", only(true, false, false, false), mono_batch(&data, 2)),
            ("tlm", only(false, true, false, false), parallel_batch(&data, 2)),
            ("sa", only(false, false, false, true), parallel_batch(&data, 3)),
            ("wa", only(false, false, true, false), parallel_batch(&data, 2)),
        ];
        for (name, obj, batch) in cases {
            let r = check_param_grads(&enc, 3, seed, |e, g, b| objective_loss(e, &data.vocab, obj, &batch, seed, g, b));
            out.push((format!("{name} seed {seed}"), r));
        }
    }
    out
}

pub fn random_sentence(lang: usize, len: usize, concepts: usize, rng: &mut impl Rng) -> Sentence {
    Sentence {
        lang,
        tokens: (0..len).map(|_| rng.random_range(0..concepts)).collect(),
    }
}

pub fn raw_pair(x: Sentence, y: Sentence) -> SentencePair {
    SentencePair {
        x,
        y,
        gold_alignment: None,
        is_parallel: true,
    }
}

/// Worst state change on the protected side when one token of the other
/// side is swapped, over all lengths up to `max_len`, and the smallest change
/// seen on the swapped row itself (a sanity check that the swap registered).
///
/// Under TGT2SRC the protected rows are the source side (with its separator)
/// and every target row before the swapped one; SRC2TGT mirrors this.
pub fn leakage(enc: &Encoder<f64>, vocab: &Vocabulary, max_len: usize, seed: u64) -> (f64, f64) {
    let mut rng = derive_rng(seed, &["leakage"]);
    let concepts = vocab.concepts;
    let mut worst: f64 = 0.0;
    let mut weakest = f64::INFINITY;
    for lx in 1..=max_len {
        for ly in 1..=max_len {
            let x = random_sentence(0, lx, concepts, &mut rng);
            let y = random_sentence(1, ly, concepts, &mut rng);
            for regime in [MaskRegime::Tgt2Src, MaskRegime::Src2Tgt] {
                let (len_changed, changed_lang) = match regime {
                    MaskRegime::Tgt2Src => (ly, 1),
                    _ => (lx, 0),
                };
                let j = rng.random_range(0..len_changed);
                let pair = raw_pair(x.clone(), y.clone());
                let mut other = pair.clone();
                let side = if changed_lang == 1 { &mut other.y } else { &mut other.x };
                side.tokens[j] = (side.tokens[j] + 1 + rng.random_range(0..concepts - 1)) % concepts;
                let a_in = encode_pair(&pair, vocab, regime, 32).unwrap();
                let b_in = encode_pair(&other, vocab, regime, 32).unwrap();
                let a = enc.forward(&a_in).unwrap();
                let b = enc.forward(&b_in).unwrap();
                let y_span = a_in.y_span.clone().unwrap();
                let (fixed_side, changed_side) = match regime {
                    MaskRegime::Tgt2Src => (0..y_span.start, y_span.clone()),
                    _ => (y_span.clone(), a_in.x_span.clone()),
                };
                let mut rows: Vec<usize> = fixed_side.collect();
                let (fixed_sep, changed_start) = match regime {
                    MaskRegime::Tgt2Src => (None, changed_side.start),
                    _ => (Some(y_span.end), changed_side.start),
                };
                rows.extend(fixed_sep);
                rows.extend(changed_start..changed_start + j);
                let (ta, tb) = (a.top().row(changed_start + j), b.top().row(changed_start + j));
                weakest = weakest.min(ta.iter().zip(tb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
                for (ha, hb) in a.hidden_states.iter().zip(&b.hidden_states) {
                    for &r in &rows {
                        for (p, q) in ha.row(r).iter().zip(hb.row(r)) {
                            worst = worst.max((p - q).abs());
                        }
                    }
                }
            }
        }
    }
    (worst, weakest)
}

/// Largest difference between source-side TGT2SRC states and a separate
/// encoding of the source sentence alone.
pub fn separate_gap(enc: &Encoder<f64>, vocab: &Vocabulary, max_len: usize, seed: u64) -> f64 {
    let mut rng = derive_rng(seed, &["separate"]);
    let mut worst: f64 = 0.0;
    for lx in 1..=max_len {
        for ly in 1..=max_len {
            let x = random_sentence(0, lx, vocab.concepts, &mut rng);
            let y = random_sentence(2, ly, vocab.concepts, &mut rng);
            let joint_in = encode_pair(&raw_pair(x.clone(), y), vocab, MaskRegime::Tgt2Src, 32).unwrap();
            let alone_in = encode_sentence(&x, vocab, 32).unwrap();
            let joint = enc.forward(&joint_in).unwrap();
            let alone = enc.forward(&alone_in).unwrap();
            for (hj, ha) in joint.hidden_states.iter().zip(&alone.hidden_states) {
                for r in 0..alone_in.len() {
                    for (p, q) in hj.row(r).iter().zip(ha.row(r)) {
                        worst = worst.max((p - q).abs());
                    }
                }
            }
        }
    }
    worst
}
