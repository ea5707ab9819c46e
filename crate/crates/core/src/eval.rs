//! Retrieval, word-alignment and zero-shot tagging evaluations on a frozen
//! encoder.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::dataset::Dataset;
use crate::corpus::{derive_rng, encode_pair, encode_sentence, Link, LanguageSpec, ParallelCorpus, Sentence, SentencePair, Vocabulary};
use crate::encoder::{cross_attention, Direction, Encoder, MaskRegime};
use crate::error::{Error, Result};
use crate::objectives::sentence_embedding;
use crate::tensor::{Scalar, Tensor};

/// Number of tag classes; a token's tag is its base concept modulo this.
pub const TAG_CLASSES: usize = 4;

/// Worker pool for evaluation, capped by `AMBER_MINI_THREADS` when set.
fn pool() -> rayon::ThreadPool {
    let threads = std::env::var("AMBER_MINI_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> Result<O> + Sync + Send) -> Result<Vec<O>> {
    pool().install(|| items.par_iter().map(f).collect())
}

/// Mean-pooled top-layer embedding of each sentence, encoded on its own.
pub fn embed_sentences<T: Scalar>(encoder: &Encoder<T>, sentences: &[Sentence], vocab: &Vocabulary) -> Result<Vec<Vec<f64>>> {
    let max = encoder.config().max_positions;
    par_map(sentences, |s| {
        let input = encode_sentence(s, vocab, max)?;
        let out = encoder.forward(&input)?;
        let e = sentence_embedding(&out, input.x_span.clone())?;
        Ok(e.data().iter().map(|v| v.to_f64().unwrap()).collect())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub candidates: usize,
    /// Queries whose best cosine was shared by several candidates.
    pub ties: usize,
}

/// Accuracy@1 of cosine nearest-neighbour search, where candidate `i` is the
/// gold match of query `i`. Ties go to the lowest candidate index.
pub fn retrieval_from_embeddings(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<RetrievalScore> {
    if queries.len() != candidates.len() {
        return Err(Error::Evaluation(format!(
            "{} queries but {} candidates",
            queries.len(),
            candidates.len()
        )));
    }
    if candidates.len() < 2 {
        return Err(Error::Evaluation("retrieval needs at least 2 candidates".into()));
    }
    let unit = |v: &Vec<f64>, what: &str, i: usize| -> Result<Vec<f64>> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Evaluation(format!("{what} {i} has a zero or non-finite embedding")));
        }
        Ok(v.iter().map(|x| x / n).collect())
    };
    let q: Vec<Vec<f64>> = queries.iter().enumerate().map(|(i, v)| unit(v, "query", i)).collect::<Result<_>>()?;
    let c: Vec<Vec<f64>> = candidates.iter().enumerate().map(|(i, v)| unit(v, "candidate", i)).collect::<Result<_>>()?;
    let (mut correct, mut ties) = (0, 0);
    for (i, qi) in q.iter().enumerate() {
        let mut best = (0, f64::NEG_INFINITY);
        let mut shared = false;
        for (j, cj) in c.iter().enumerate() {
            let s: f64 = qi.iter().zip(cj).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (j, s);
                shared = false;
            } else if s == best.1 {
                shared = true;
            }
        }
        correct += usize::from(best.0 == i);
        ties += usize::from(shared);
    }
    Ok(RetrievalScore {
        accuracy: correct as f64 / q.len() as f64,
        correct,
        total: q.len(),
        candidates: c.len(),
        ties,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    /// Language of the queries.
    pub source: String,
    /// Language of the candidates.
    pub target: String,
    #[serde(flatten)]
    pub score: RetrievalScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub pairs: Vec<RetrievalEntry>,
    pub mean_accuracy: f64,
}

impl RetrievalReport {
    pub fn accuracy_for(&self, lang: &str) -> Option<f64> {
        self.pairs.iter().find(|p| p.source == lang).map(|p| p.score.accuracy)
    }
}

/// For each held-out corpus, finds the pivot translation of every
/// non-pivot sentence among all pivot sentences of that corpus.
pub fn retrieval_accuracy<T: Scalar>(encoder: &Encoder<T>, held_out: &[ParallelCorpus], vocab: &Vocabulary) -> Result<RetrievalReport> {
    let mut pairs = Vec::new();
    for corpus in held_out {
        let ys: Vec<Sentence> = corpus.pairs.iter().map(|p| p.y.clone()).collect();
        let xs: Vec<Sentence> = corpus.pairs.iter().map(|p| p.x.clone()).collect();
        let q = embed_sentences(encoder, &ys, vocab)?;
        let c = embed_sentences(encoder, &xs, vocab)?;
        pairs.push(RetrievalEntry {
            source: vocab.tags[corpus.tgt].clone(),
            target: vocab.tags[corpus.src].clone(),
            score: retrieval_from_embeddings(&q, &c)?,
        });
    }
    let mean_accuracy = mean(pairs.iter().map(|p| p.score.accuracy));
    Ok(RetrievalReport { pairs, mean_accuracy })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Row-wise argmax of the head-averaged matrices; ties go to the lowest column.
pub fn links_from_attention<T: Scalar>(heads: &[Tensor<T>]) -> Result<Vec<Link>> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Shape("no attention heads".into()))?;
    let (rows, cols) = first.dims2();
    let mut avg = vec![0.0f64; rows * cols];
    for h in heads {
        if h.dims2() != (rows, cols) {
            return Err(Error::Dimension {
                op: "links_from_attention",
                left: first.shape().to_vec(),
                right: h.shape().to_vec(),
            });
        }
        for (a, v) in avg.iter_mut().zip(h.data()) {
            *a += v.to_f64().unwrap();
        }
    }
    Ok((0..rows)
        .map(|i| {
            let row = &avg[i * cols..(i + 1) * cols];
            let mut best = 0;
            for j in 1..cols {
                if row[j] > row[best] {
                    best = j;
                }
            }
            (i, best)
        })
        .collect())
}

/// Target-to-source cross attention of the top layer, one matrix per head.
pub fn alignment_attention<T: Scalar>(encoder: &Encoder<T>, pair: &SentencePair, vocab: &Vocabulary) -> Result<Vec<Tensor<T>>> {
    let input = encode_pair(pair, vocab, MaskRegime::Tgt2Src, encoder.config().max_positions)?;
    let out = encoder.forward(&input)?;
    cross_attention(&out, Direction::YtoX)
}

pub fn extract_alignments<T: Scalar>(encoder: &Encoder<T>, pair: &SentencePair, vocab: &Vocabulary) -> Result<Vec<Link>> {
    links_from_attention(&alignment_attention(encoder, pair, vocab)?)
}

/// Link predictions from each head separately.
pub fn extract_alignments_per_head<T: Scalar>(encoder: &Encoder<T>, pair: &SentencePair, vocab: &Vocabulary) -> Result<Vec<Vec<Link>>> {
    alignment_attention(encoder, pair, vocab)?
        .into_iter()
        .map(|h| links_from_attention(&[h]))
        .collect()
}

/// Link counts accumulated over sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub predicted: usize,
    pub gold: usize,
    pub hits: usize,
}

impl AlignmentCounts {
    pub fn of(pred: &[Link], gold: &[Link]) -> Self {
        let p: HashSet<Link> = pred.iter().copied().collect();
        let g: HashSet<Link> = gold.iter().copied().collect();
        AlignmentCounts {
            predicted: p.len(),
            gold: g.len(),
            hits: p.intersection(&g).count(),
        }
    }

    pub fn add(&mut self, o: AlignmentCounts) {
        self.predicted += o.predicted;
        self.gold += o.gold;
        self.hits += o.hits;
    }

    pub fn score(&self) -> AlignmentScore {
        let precision = if self.predicted == 0 { 1.0 } else { self.hits as f64 / self.predicted as f64 };
        let recall = if self.gold == 0 { 0.0 } else { self.hits as f64 / self.gold as f64 };
        let denom = self.predicted + self.gold;
        let aer = if denom == 0 { 0.0 } else { 1.0 - 2.0 * self.hits as f64 / denom as f64 };
        AlignmentScore { precision, recall, aer }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub precision: f64,
    pub recall: f64,
    pub aer: f64,
}

pub fn alignment_error_rate(pred: &[Link], gold: &[Link]) -> AlignmentScore {
    AlignmentCounts::of(pred, gold).score()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub source: String,
    pub target: String,
    pub reorder: String,
    pub pairs: usize,
    #[serde(flatten)]
    pub counts: AlignmentCounts,
    #[serde(flatten)]
    pub score: AlignmentScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub languages: Vec<AlignmentEntry>,
}

impl AlignmentReport {
    pub fn aer_for(&self, lang: &str) -> Option<f64> {
        self.languages.iter().find(|e| e.target == lang).map(|e| e.score.aer)
    }
}

/// Corpus-level AER of head-averaged argmax links on each held-out corpus.
pub fn alignment_report<T: Scalar>(
    encoder: &Encoder<T>,
    held_out: &[ParallelCorpus],
    specs: &[LanguageSpec],
    vocab: &Vocabulary,
) -> Result<AlignmentReport> {
    let mut languages = Vec::new();
    for corpus in held_out {
        let per_pair = par_map(&corpus.pairs, |p| {
            let gold = p
                .gold_alignment
                .as_ref()
                .ok_or_else(|| Error::Evaluation("held-out pair lacks a gold alignment".into()))?;
            Ok(AlignmentCounts::of(&extract_alignments(encoder, p, vocab)?, gold))
        })?;
        let mut counts = AlignmentCounts::default();
        per_pair.into_iter().for_each(|c| counts.add(c));
        languages.push(AlignmentEntry {
            source: vocab.tags[corpus.src].clone(),
            target: vocab.tags[corpus.tgt].clone(),
            reorder: specs[corpus.tgt].reorder.to_string(),
            pairs: corpus.pairs.len(),
            counts,
            score: counts.score(),
        });
    }
    Ok(AlignmentReport { languages })
}

/// Settings of the linear tagging probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 300, lr: 0.05 }
    }
}

/// Softmax-regression weights: `classes` rows of `dim` weights plus a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub dim: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn random(dim: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let n = Normal::new(0.0, 1.0).unwrap();
        LinearProbe {
            dim,
            classes,
            weights: (0..dim * classes).map(|_| n.sample(rng)).collect(),
            bias: vec![0.0; classes],
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for c in 0..self.classes {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            out[c] = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits(x, &mut z);
        let mut best = 0;
        for c in 1..self.classes {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features.iter().zip(labels).filter(|(x, y)| self.predict(x) == **y).count();
        hits as f64 / labels.len().max(1) as f64
    }

    /// Full-batch Adam on mean cross-entropy, starting from zero weights.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let distinct: HashSet<usize> = labels.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::config("probe", "tagging probe needs at least two classes in its training set"));
        }
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Evaluation("probe features and labels disagree".into()));
        }
        let dim = features[0].len();
        let mut p = LinearProbe {
            dim,
            classes,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
        };
        let n_params = dim * classes + classes;
        let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let scale = 1.0 / features.len() as f64;
        let mut z = vec![0.0; classes];
        for t in 1..=cfg.epochs {
            let mut grad = vec![0.0; n_params];
            for (x, &y) in features.iter().zip(labels) {
                p.logits(x, &mut z);
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
                for c in 0..classes {
                    let d = ((z[c] - mx).exp() / s - f64::from(c == y)) * scale;
                    for (g, xi) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    grad[dim * classes + c] += d;
                }
            }
            let c1 = 1.0 - b1.powi(t as i32);
            let c2 = 1.0 - b2.powi(t as i32);
            for k in 0..n_params {
                m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                let step = cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                if k < dim * classes {
                    p.weights[k] -= step;
                } else {
                    p.bias[k - dim * classes] -= step;
                }
            }
        }
        Ok(p)
    }
}

/// Top-layer features and tags of every token, each sentence encoded on its own.
pub fn token_features<T: Scalar>(
    encoder: &Encoder<T>,
    sentences: &[Sentence],
    specs: &[LanguageSpec],
    vocab: &Vocabulary,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let max = encoder.config().max_positions;
    let decipher: Vec<Vec<usize>> = specs.iter().map(|s| s.decipher()).collect();
    let per = par_map(sentences, |s| {
        let input = encode_sentence(s, vocab, max)?;
        let out = encoder.forward(&input)?;
        let top = out.top();
        Ok(input
            .x_span
            .clone()
            .zip(&s.tokens)
            .map(|(r, &t)| {
                let f: Vec<f64> = top.row(r).iter().map(|v| v.to_f64().unwrap()).collect();
                (f, decipher[s.lang][t] % TAG_CLASSES)
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per.into_iter().flatten().unzip())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferEntry {
    pub language: String,
    pub accuracy: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub train_language: String,
    pub classes: usize,
    pub train_tokens: usize,
    pub held_in_accuracy: f64,
    /// Accuracy on unseen sentences of the training language.
    pub source_accuracy: f64,
    pub targets: Vec<TransferEntry>,
    pub mean_target_accuracy: f64,
    /// `source_accuracy - mean_target_accuracy`.
    pub transfer_gap: f64,
}

impl TransferReport {
    pub fn accuracy_for(&self, lang: &str) -> Option<f64> {
        self.targets.iter().find(|e| e.language == lang).map(|e| e.accuracy)
    }
}

fn transfer_with<T: Scalar>(
    encoder: &Encoder<T>,
    data: &Dataset,
    fit: impl FnOnce(&[Vec<f64>], &[usize]) -> Result<LinearProbe>,
) -> Result<TransferReport> {
    let (train_x, train_y) = token_features(encoder, &data.probe, &data.specs, &data.vocab)?;
    let probe = fit(&train_x, &train_y)?;
    let held_in_accuracy = probe.accuracy(&train_x, &train_y);
    let source: Vec<Sentence> = data.held_out[0].pairs.iter().map(|p| p.x.clone()).collect();
    let (sx, sy) = token_features(encoder, &source, &data.specs, &data.vocab)?;
    let source_accuracy = probe.accuracy(&sx, &sy);
    let mut targets = Vec::new();
    for corpus in &data.held_out {
        let ys: Vec<Sentence> = corpus.pairs.iter().map(|p| p.y.clone()).collect();
        let (tx, ty) = token_features(encoder, &ys, &data.specs, &data.vocab)?;
        targets.push(TransferEntry {
            language: data.vocab.tags[corpus.tgt].clone(),
            accuracy: probe.accuracy(&tx, &ty),
            tokens: ty.len(),
        });
    }
    let mean_target_accuracy = mean(targets.iter().map(|t| t.accuracy));
    Ok(TransferReport {
        train_language: data.pivot().tag.clone(),
        classes: TAG_CLASSES,
        train_tokens: train_y.len(),
        held_in_accuracy,
        source_accuracy,
        targets,
        mean_target_accuracy,
        transfer_gap: source_accuracy - mean_target_accuracy,
    })
}

/// Fits a linear probe on pivot-language token features and applies it,
/// unchanged, to every other language.
pub fn zero_shot_tag_transfer<T: Scalar>(encoder: &Encoder<T>, data: &Dataset, cfg: &ProbeConfig) -> Result<TransferReport> {
    transfer_with(encoder, data, |x, y| LinearProbe::fit(x, y, TAG_CLASSES, cfg))
}

/// The same protocol with a randomly initialised, untrained probe.
pub fn random_probe_transfer<T: Scalar>(encoder: &Encoder<T>, data: &Dataset, seed: u64) -> Result<TransferReport> {
    transfer_with(encoder, data, |x, _| {
        let mut rng = derive_rng(seed, &["random-probe"]);
        Ok(LinearProbe::random(x[0].len(), TAG_CLASSES, &mut rng))
    })
}

/// All three evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub retrieval: RetrievalReport,
    pub alignment: AlignmentReport,
    pub transfer: TransferReport,
}

pub fn evaluate_all<T: Scalar>(encoder: &Encoder<T>, data: &Dataset, probe: &ProbeConfig) -> Result<EvalSummary> {
    Ok(EvalSummary {
        retrieval: retrieval_accuracy(encoder, &data.held_out, &data.vocab)?,
        alignment: alignment_report(encoder, &data.held_out, &data.specs, &data.vocab)?,
        transfer: zero_shot_tag_transfer(encoder, data, probe)?,
    })
}

/// One point of the per-language analysis: how much a metric moved between a
/// baseline and a compared model, next to the language's parallel budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub language: String,
    pub parallel_pairs: usize,
    pub baseline: f64,
    pub compared: f64,
    pub delta: f64,
}

pub fn metric_deltas(specs: &[LanguageSpec], baseline: &RetrievalReport, compared: &RetrievalReport) -> Vec<DeltaRow> {
    specs[1..]
        .iter()
        .filter_map(|s| {
            let b = baseline.accuracy_for(&s.tag)?;
            let c = compared.accuracy_for(&s.tag)?;
            Some(DeltaRow {
                language: s.tag.clone(),
                parallel_pairs: s.parallel_size,
                baseline: b,
                compared: c,
                delta: c - b,
            })
        })
        .collect()
}

pub fn format_deltas(rows: &[DeltaRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.language.clone(),
                r.parallel_pairs.to_string(),
                format!("{:.4}", r.baseline),
                format!("{:.4}", r.compared),
                format!("{:.4}", r.delta),
            ]
        })
        .collect();
    crate::corpus::text::format_table(&["language", "parallel_pairs", "baseline", "compared", "delta"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn onehot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| f64::from(i == k)).collect()
    }

    #[test]
    fn retrieval_examples() {
        let e: Vec<Vec<f64>> = (0..5).map(|k| onehot(k, 5)).collect();
        let r = retrieval_from_embeddings(&e, &e).unwrap();
        assert_eq!((r.correct, r.ties), (5, 0));
        assert_eq!(r.accuracy, 1.0);

        let same = vec![vec![1.0, 2.0]; 6];
        let r = retrieval_from_embeddings(&same, &same).unwrap();
        assert_eq!((r.correct, r.ties, r.total), (1, 6, 6));

        let mut z = e.clone();
        z[3] = vec![0.0; 5];
        assert!(matches!(retrieval_from_embeddings(&e, &z), Err(Error::Evaluation(_))));
        assert!(retrieval_from_embeddings(&e, &e[..4]).is_err());
        assert!(retrieval_from_embeddings(&e[..1], &e[..1]).is_err());
    }

    proptest! {
        #[test]
        fn retrieval_ignores_positive_rescaling(
            raw in proptest::collection::vec(-1.0f64..1.0, 6 * 4 * 2),
            scales in proptest::collection::vec(0.1f64..10.0, 12),
        ) {
            let q: Vec<Vec<f64>> = raw[..24].chunks(4).map(|c| c.to_vec()).collect();
            let c: Vec<Vec<f64>> = raw[24..].chunks(4).map(|c| c.to_vec()).collect();
            prop_assume!(q.iter().chain(&c).all(|v| v.iter().any(|x| *x != 0.0)));
            let base = retrieval_from_embeddings(&q, &c).unwrap();
            let sq: Vec<Vec<f64>> = q.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
            let sc: Vec<Vec<f64>> = c.iter().zip(&scales[6..]).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
            let scaled = retrieval_from_embeddings(&sq, &sc).unwrap();
            prop_assert_eq!(base.correct, scaled.correct);
        }

        #[test]
        fn aer_is_relabeling_invariant(
            gold in proptest::collection::vec((0usize..6, 0usize..6), 1..10),
            pred in proptest::collection::vec((0usize..6, 0usize..6), 0..10),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut rng = derive_rng(seed, &["relabel"]);
            let mut pi: Vec<usize> = (0..6).collect();
            let mut pj: Vec<usize> = (0..6).collect();
            pi.shuffle(&mut rng);
            pj.shuffle(&mut rng);
            let map = |l: &[Link]| -> Vec<Link> { l.iter().map(|&(i, j)| (pi[i], pj[j])).collect() };
            let a = alignment_error_rate(&pred, &gold);
            let b = alignment_error_rate(&map(&pred), &map(&gold));
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn aer_examples() {
        let gold = vec![(0, 1), (1, 0), (2, 3), (3, 2)];
        assert_eq!(alignment_error_rate(&gold, &gold).aer, 0.0);
        assert_eq!(alignment_error_rate(&[(0, 0), (1, 1)], &gold).aer, 1.0);
        let pred = vec![(0, 1), (1, 0), (2, 3), (3, 3)];
        assert!((alignment_error_rate(&pred, &gold).aer - 0.25).abs() < 1e-15);
        let empty = alignment_error_rate(&[], &gold);
        assert_eq!((empty.precision, empty.recall, empty.aer), (1.0, 0.0, 1.0));
    }

    #[test]
    fn links_follow_argmax() {
        let p = Tensor::<f64>::from_rows(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(links_from_attention(&[p]).unwrap(), vec![(0, 2), (1, 0), (2, 1)]);
        let u = Tensor::<f64>::filled(&[2, 3], 1.0 / 3.0);
        assert_eq!(links_from_attention(&[u.clone(), u]).unwrap(), vec![(0, 0), (1, 0)]);
        // heads disagree; the average decides
        let a = Tensor::<f64>::from_rows(&[&[0.6, 0.4]]);
        let b = Tensor::<f64>::from_rows(&[&[0.0, 1.0]]);
        assert_eq!(links_from_attention(&[a, b]).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn probe_learns_separable_classes() {
        let x: Vec<Vec<f64>> = (0..40).map(|k| onehot(k % 4, 4)).collect();
        let y: Vec<usize> = (0..40).map(|k| k % 4).collect();
        let p = LinearProbe::fit(&x, &y, 4, &ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy(&x, &y), 1.0);
        assert!(matches!(
            LinearProbe::fit(&x, &vec![2; 40], 4, &ProbeConfig::default()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn delta_rows() {
        let spec = |i: usize, tag: &str, p: usize| LanguageSpec {
            index: i,
            tag: tag.into(),
            cipher: vec![0],
            reorder: crate::corpus::Reorder::Identity,
            corpus_size: 1,
            parallel_size: p,
        };
        let rep = |accs: &[(&str, f64)]| RetrievalReport {
            pairs: accs
                .iter()
                .map(|(l, a)| RetrievalEntry {
                    source: l.to_string(),
                    target: "a".into(),
                    score: RetrievalScore { accuracy: *a, correct: 0, total: 1, candidates: 2, ties: 0 },
                })
                .collect(),
            mean_accuracy: 0.0,
        };
        let specs = vec![spec(0, "a", 0), spec(1, "b", 100), spec(2, "c", 10)];
        let rows = metric_deltas(&specs, &rep(&[("b", 0.5), ("c", 0.1)]), &rep(&[("b", 0.75), ("c", 0.6)]));
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[1].parallel_pairs, rows[1].delta), (10, 0.5));
        assert!(format_deltas(&rows).starts_with("language\tparallel_pairs"));
    }
}
