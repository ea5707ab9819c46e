//! Synthetic multilingual data.
//!
//! Every language is a cipher of one shared base language: a bijective
//! substitution of the base concepts plus a deterministic word-order rule.
//! Surface vocabularies are disjoint across languages, so the only route to
//! cross-lingual alignment is through the training objectives.

pub mod dataset;
pub mod text;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::encoder::{build_mask, EncoderInput, MaskRegime};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}

/// Word-order rule applied to a base sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Reorder {
    Identity,
    /// Swap positions (0,1), (2,3), ...; an odd tail stays put.
    AdjacentSwap,
    /// Reverse consecutive windows of the given width; the tail window is
    /// reversed as well.
    WindowReverse(usize),
}

impl Reorder {
    /// `perm[k]` is the base position whose token lands at position `k`.
    pub fn permutation(self, len: usize) -> Vec<usize> {
        match self {
            Reorder::Identity => (0..len).collect(),
            Reorder::AdjacentSwap => (0..len)
                .map(|k| {
                    let partner = k ^ 1;
                    if partner < len {
                        partner
                    } else {
                        k
                    }
                })
                .collect(),
            Reorder::WindowReverse(w) => {
                let w = w.max(1);
                let mut perm = Vec::with_capacity(len);
                for start in (0..len).step_by(w) {
                    let end = (start + w).min(len);
                    perm.extend((start..end).rev());
                }
                perm
            }
        }
    }
}

impl fmt::Display for Reorder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reorder::Identity => write!(f, "identity"),
            Reorder::AdjacentSwap => write!(f, "adjacent-swap"),
            Reorder::WindowReverse(w) => write!(f, "window-reverse:{w}"),
        }
    }
}

impl FromStr for Reorder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(Reorder::Identity),
            "adjacent-swap" => Ok(Reorder::AdjacentSwap),
            _ => {
                let w = s
                    .strip_prefix("window-reverse:")
                    .and_then(|w| w.parse::<usize>().ok())
                    .filter(|w| *w >= 2)
                    .ok_or_else(|| {
                        format!("unknown reorder `{s}` (identity | adjacent-swap | window-reverse:<w>=2..)")
                    })?;
                Ok(Reorder::WindowReverse(w))
            }
        }
    }
}

impl TryFrom<String> for Reorder {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Reorder> for String {
    fn from(r: Reorder) -> String {
        r.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CipherKind {
    Identity,
    #[default]
    Random,
}

/// One synthetic language as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub tag: String,
    #[serde(default)]
    pub cipher: CipherKind,
    pub reorder: Reorder,
    /// Monolingual sentences.
    pub mono: usize,
    /// Parallel pairs with the pivot language (index 0). Must be 0 for the pivot.
    #[serde(default)]
    pub parallel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub concepts: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent applied to corpus sizes when choosing which corpus to draw from.
    pub smoothing: f64,
    /// Held-out evaluation pairs per non-pivot language.
    pub held_out: usize,
    /// Pivot-language sentences used to fit the tagging probe.
    pub probe_train: usize,
    pub languages: Vec<LanguageConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let lang = |tag: &str, reorder, mono, parallel| LanguageConfig {
            tag: tag.into(),
            cipher: CipherKind::Random,
            reorder,
            mono,
            parallel,
        };
        CorpusConfig {
            concepts: 64,
            zipf_exponent: 1.2,
            min_len: 3,
            max_len: 12,
            smoothing: 0.7,
            held_out: 200,
            probe_train: 400,
            languages: vec![
                lang("l0", Reorder::Identity, 4000, 0),
                lang("l1", Reorder::Identity, 2000, 1800),
                lang("l2", Reorder::AdjacentSwap, 1500, 1000),
                lang("l3", Reorder::WindowReverse(3), 500, 200),
            ],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 {
            return Err(Error::config("corpus.concepts", "must be positive"));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::config("corpus.zipf_exponent", "must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("corpus.min_len", "need 1 <= min_len <= max_len"));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::config("corpus.smoothing", "must be >= 0"));
        }
        if self.languages.len() < 2 {
            return Err(Error::config("corpus.languages", "need a pivot and at least one other language"));
        }
        if self.held_out < 2 {
            return Err(Error::config("corpus.held_out", "need at least 2 held-out pairs"));
        }
        for (i, l) in self.languages.iter().enumerate() {
            let field = |f: &str| format!("corpus.languages[{i}].{f}");
            if l.tag.is_empty() || l.tag.chars().any(|c| c.is_whitespace() || c == '-' || c == '.') {
                return Err(Error::config(field("tag"), "must be non-empty without whitespace, '-' or '.'"));
            }
            if self.languages[..i].iter().any(|o| o.tag == l.tag) {
                return Err(Error::config(field("tag"), format!("duplicate tag `{}`", l.tag)));
            }
            if i == 0 && l.parallel != 0 {
                return Err(Error::config(field("parallel"), "the pivot has no parallel corpus with itself"));
            }
            if l.mono == 1 {
                return Err(Error::config(field("mono"), "need 0 or at least 2 sentences to form contiguous pairs"));
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.concepts * self.languages.len() + NUM_SPECIAL
    }

    /// Resolves cipher permutations from `seed`.
    pub fn language_specs(&self, seed: u64) -> Vec<LanguageSpec> {
        self.languages
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let cipher = match l.cipher {
                    CipherKind::Identity => (0..self.concepts).collect(),
                    CipherKind::Random => {
                        let mut rng = derive_rng(seed, &["cipher", &l.tag]);
                        let mut p: Vec<usize> = (0..self.concepts).collect();
                        p.shuffle(&mut rng);
                        p
                    }
                };
                LanguageSpec {
                    index: i,
                    tag: l.tag.clone(),
                    cipher,
                    reorder: l.reorder,
                    corpus_size: l.mono,
                    parallel_size: l.parallel,
                }
            })
            .collect()
    }

    pub fn sentence_shape(&self) -> SentenceShape {
        SentenceShape {
            concepts: self.concepts,
            zipf_exponent: self.zipf_exponent,
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

/// Seeds a generator from a base seed and a path of labels.
pub fn derive_rng(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Resolved language: cipher maps base concept -> local token index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub index: usize,
    pub tag: String,
    pub cipher: Vec<usize>,
    pub reorder: Reorder,
    pub corpus_size: usize,
    pub parallel_size: usize,
}

impl LanguageSpec {
    pub fn encode_concepts(&self, base: &[usize]) -> Vec<usize> {
        base.iter().map(|&c| self.cipher[c]).collect()
    }

    pub fn decipher(&self) -> Vec<usize> {
        let mut inv = vec![0; self.cipher.len()];
        for (c, &t) in self.cipher.iter().enumerate() {
            inv[t] = c;
        }
        inv
    }

    /// Cipher then reorder; returns the surface sentence and the permutation used.
    pub fn realize(&self, base: &[usize]) -> (Sentence, Vec<usize>) {
        let perm = self.reorder.permutation(base.len());
        let tokens = perm.iter().map(|&p| self.cipher[base[p]]).collect();
        (
            Sentence {
                lang: self.index,
                tokens,
            },
            perm,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentenceShape {
    pub concepts: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
}

/// A sentence in one language; tokens are language-local indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub lang: usize,
    pub tokens: Vec<usize>,
}

/// `(i, j)`: target position `i` is aligned to source position `j`.
pub type Link = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub x: Sentence,
    pub y: Sentence,
    pub gold_alignment: Option<Vec<Link>>,
    pub is_parallel: bool,
}

impl SentencePair {
    pub fn monolingual(x: Sentence, y: Sentence) -> Self {
        SentencePair {
            x,
            y,
            gold_alignment: None,
            is_parallel: false,
        }
    }
}

/// Token <-> id maps: four specials, then one block of `concepts` ids per language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub concepts: usize,
    pub tags: Vec<String>,
}

const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]"];

impl Vocabulary {
    pub fn new(concepts: usize, tags: Vec<String>) -> Self {
        Vocabulary { concepts, tags }
    }

    pub fn size(&self) -> usize {
        NUM_SPECIAL + self.concepts * self.tags.len()
    }

    pub fn id(&self, lang: usize, local: usize) -> usize {
        debug_assert!(local < self.concepts && lang < self.tags.len());
        NUM_SPECIAL + lang * self.concepts + local
    }

    /// Inverse of [`Vocabulary::id`]; `None` for specials.
    pub fn local(&self, id: usize) -> Option<(usize, usize)> {
        if is_special(id) || id >= self.size() {
            return None;
        }
        let k = id - NUM_SPECIAL;
        Some((k / self.concepts, k % self.concepts))
    }

    pub fn token(&self, id: usize) -> String {
        match self.local(id) {
            Some((lang, local)) => format!("{}_{local}", self.tags[lang]),
            None => SPECIAL_NAMES
                .get(id)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("[UNK{id}]")),
        }
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        if let Some(i) = SPECIAL_NAMES.iter().position(|s| *s == token) {
            return Some(i);
        }
        let (tag, local) = token.rsplit_once('_')?;
        let lang = self.tags.iter().position(|t| t == tag)?;
        let local: usize = local.parse().ok()?;
        (local < self.concepts).then(|| self.id(lang, local))
    }

    pub fn lang_index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn ids(&self, s: &Sentence) -> Vec<usize> {
        s.tokens.iter().map(|&t| self.id(s.lang, t)).collect()
    }
}

/// Base-language sentences: lengths uniform in `[min_len, max_len]`, concepts
/// drawn from a Zipf law over concept rank (concept 0 is the most frequent).
pub fn generate_base_sentences(shape: &SentenceShape, count: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let zipf = Zipf::new(shape.concepts as f64, shape.zipf_exponent).unwrap();
    (0..count)
        .map(|_| {
            let len = rng.random_range(shape.min_len..=shape.max_len);
            (0..len).map(|_| zipf.sample(rng) as usize - 1).collect()
        })
        .collect()
}

/// Monolingual corpus for one language; deterministic in `base_seed`.
pub fn generate_corpus(spec: &LanguageSpec, shape: &SentenceShape, base_seed: u64) -> Vec<Sentence> {
    let mut rng = derive_rng(base_seed, &["mono", &spec.tag]);
    generate_base_sentences(shape, spec.corpus_size, &mut rng)
        .iter()
        .map(|b| spec.realize(b).0)
        .collect()
}

/// Realises one base sentence in two languages with its gold alignment.
pub fn make_parallel(base: &[usize], src: &LanguageSpec, tgt: &LanguageSpec) -> SentencePair {
    let (x, src_perm) = src.realize(base);
    let (y, tgt_perm) = tgt.realize(base);
    // x[j] carries base[src_perm[j]]; y[i] carries base[tgt_perm[i]].
    let mut where_in_x = vec![0; base.len()];
    for (j, &b) in src_perm.iter().enumerate() {
        where_in_x[b] = j;
    }
    let gold = tgt_perm
        .iter()
        .enumerate()
        .map(|(i, &b)| (i, where_in_x[b]))
        .collect();
    SentencePair {
        x,
        y,
        gold_alignment: Some(gold),
        is_parallel: true,
    }
}

/// Contiguous sentences of one language; entry `k` pairs sentences `k` and `k+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonoCorpus {
    pub lang: usize,
    pub sentences: Vec<Sentence>,
}

impl MonoCorpus {
    pub fn available(&self) -> usize {
        self.sentences.len().saturating_sub(1)
    }

    pub fn pair(&self, k: usize) -> SentencePair {
        SentencePair::monolingual(self.sentences[k].clone(), self.sentences[k + 1].clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub src: usize,
    pub tgt: usize,
    pub pairs: Vec<SentencePair>,
}

pub fn generate_parallel(
    src: &LanguageSpec,
    tgt: &LanguageSpec,
    count: usize,
    shape: &SentenceShape,
    seed: u64,
    stream: &str,
) -> ParallelCorpus {
    let mut rng = derive_rng(seed, &[stream, &src.tag, &tgt.tag]);
    let pairs = generate_base_sentences(shape, count, &mut rng)
        .iter()
        .map(|b| make_parallel(b, src, tgt))
        .collect();
    ParallelCorpus {
        src: src.index,
        tgt: tgt.index,
        pairs,
    }
}

/// Normalised `n_l^s` selection probabilities.
pub fn smoothed_probs(sizes: &[usize], smoothing: f64) -> Vec<f64> {
    let w: Vec<f64> = sizes
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (n as f64).powf(smoothing) })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

/// Where a batch entry came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Mono { corpus: usize, index: usize },
    Parallel { corpus: usize, index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub pairs: Vec<SentencePair>,
    pub origins: Vec<Origin>,
}

impl Batch {
    pub fn parallel_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_parallel).count()
    }
}

fn draw_slots(
    sizes: &[usize],
    smoothing: f64,
    slots: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut used: Vec<std::collections::HashSet<usize>> = vec![Default::default(); sizes.len()];
    let mut out = Vec::with_capacity(slots);
    for _ in 0..slots {
        // Corpora exhausted for this batch drop out of the draw.
        let remaining: Vec<usize> = sizes
            .iter()
            .zip(&used)
            .map(|(&n, u)| n - u.len())
            .collect();
        let probs = smoothed_probs(
            &sizes
                .iter()
                .zip(&remaining)
                .map(|(&n, &r)| if r == 0 { 0 } else { n })
                .collect::<Vec<_>>(),
            smoothing,
        );
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut corpus = probs.iter().rposition(|p| *p > 0.0).unwrap();
        for (c, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                corpus = c;
                break;
            }
        }
        let index = loop {
            let k = rng.random_range(0..sizes[corpus]);
            if used[corpus].insert(k) {
                break k;
            }
        };
        out.push((corpus, index));
    }
    out
}

/// Draws a mixed batch. When both monolingual and parallel corpora are given
/// the batch is split evenly between them (parallel gets the smaller half);
/// within each side a corpus is picked with probability proportional to
/// `size^smoothing`, then an unused entry uniformly.
pub fn sample_batch(
    mono: &[MonoCorpus],
    parallel: &[ParallelCorpus],
    batch_size: usize,
    smoothing: f64,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if batch_size < 2 {
        return Err(Error::BatchSize(format!("batch_size {batch_size} < 2")));
    }
    let mono_sizes: Vec<usize> = mono.iter().map(|m| m.available()).collect();
    let par_sizes: Vec<usize> = parallel.iter().map(|p| p.pairs.len()).collect();
    let mono_total: usize = mono_sizes.iter().sum();
    let par_total: usize = par_sizes.iter().sum();
    if mono_total + par_total == 0 {
        return Err(Error::BatchSize("every corpus is empty".into()));
    }
    let (n_mono, n_par) = match (mono_total > 0, par_total > 0) {
        (true, true) => (batch_size - batch_size / 2, batch_size / 2),
        (true, false) => (batch_size, 0),
        (false, _) => (0, batch_size),
    };
    if n_mono > mono_total || n_par > par_total {
        return Err(Error::BatchSize(format!(
            "batch needs {n_mono} monolingual and {n_par} parallel entries, only {mono_total} and {par_total} available"
        )));
    }
    let mut pairs = Vec::with_capacity(batch_size);
    let mut origins = Vec::with_capacity(batch_size);
    for (corpus, index) in draw_slots(&mono_sizes, smoothing, n_mono, rng) {
        pairs.push(mono[corpus].pair(index));
        origins.push(Origin::Mono { corpus, index });
    }
    for (corpus, index) in draw_slots(&par_sizes, smoothing, n_par, rng) {
        pairs.push(parallel[corpus].pairs[index].clone());
        origins.push(Origin::Parallel { corpus, index });
    }
    Ok(Batch { pairs, origins })
}

/// Encoder input for a sentence pair.
///
/// `Full` lays out `[CLS] x [SEP] y [SEP]` with continuous positions and
/// segments 0/1. The other regimes lay out `x [SEP] y [SEP]` with the target
/// positions restarted at 0 and segment 1 on the target side.
pub fn encode_pair(
    pair: &SentencePair,
    vocab: &Vocabulary,
    regime: MaskRegime,
    max_positions: usize,
) -> Result<EncoderInput> {
    let (lx, ly) = (pair.x.tokens.len(), pair.y.tokens.len());
    if lx == 0 {
        return Err(Error::EmptySource);
    }
    if ly == 0 {
        return Err(Error::Input("target sentence is empty".into()));
    }
    let mut tokens = Vec::with_capacity(lx + ly + 3);
    let (segments, positions, mask, x_span, y_span);
    if regime == MaskRegime::Full {
        tokens.push(CLS);
        tokens.extend(vocab.ids(&pair.x));
        tokens.push(SEP);
        tokens.extend(vocab.ids(&pair.y));
        tokens.push(SEP);
        let n = tokens.len();
        if n > max_positions {
            return Err(Error::Length { len: n, max: max_positions });
        }
        segments = (0..n).map(|k| usize::from(k >= lx + 2)).collect();
        positions = (0..n).collect();
        mask = build_mask(regime, lx + 2, ly + 1)?;
        x_span = 1..1 + lx;
        y_span = lx + 2..lx + 2 + ly;
    } else {
        tokens.extend(vocab.ids(&pair.x));
        tokens.push(SEP);
        tokens.extend(vocab.ids(&pair.y));
        tokens.push(SEP);
        let longest = (lx + 1).max(ly + 1);
        if longest > max_positions {
            return Err(Error::Length { len: longest, max: max_positions });
        }
        segments = (0..tokens.len()).map(|k| usize::from(k > lx)).collect();
        positions = (0..=lx).chain(0..=ly).collect();
        mask = build_mask(regime, lx + 1, ly + 1)?;
        x_span = 0..lx;
        y_span = lx + 1..lx + 1 + ly;
    }
    Ok(EncoderInput {
        tokens,
        segments,
        positions,
        mask,
        regime,
        x_span,
        y_span: Some(y_span),
    })
}

/// A single sentence on its own: `x [SEP]`, segment 0, positions from 0.
pub fn encode_sentence(s: &Sentence, vocab: &Vocabulary, max_positions: usize) -> Result<EncoderInput> {
    let len = s.tokens.len();
    if len == 0 {
        return Err(Error::EmptySource);
    }
    if len + 1 > max_positions {
        return Err(Error::Length { len: len + 1, max: max_positions });
    }
    let mut tokens = vocab.ids(s);
    tokens.push(SEP);
    Ok(EncoderInput {
        segments: vec![0; len + 1],
        positions: (0..=len).collect(),
        mask: build_mask(MaskRegime::Separate, len + 1, 0)?,
        regime: MaskRegime::Separate,
        x_span: 0..len,
        y_span: None,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(index: usize, reorder: Reorder) -> LanguageSpec {
        LanguageSpec {
            index,
            tag: format!("t{index}"),
            cipher: (0..64).collect(),
            reorder,
            corpus_size: 10,
            parallel_size: 0,
        }
    }

    fn shape() -> SentenceShape {
        CorpusConfig::default().sentence_shape()
    }

    #[test]
    fn reorder_permutations() {
        assert_eq!(Reorder::AdjacentSwap.permutation(4), vec![1, 0, 3, 2]);
        assert_eq!(Reorder::AdjacentSwap.permutation(3), vec![1, 0, 2]);
        assert_eq!(Reorder::WindowReverse(3).permutation(7), vec![2, 1, 0, 5, 4, 3, 6]);
        assert_eq!(Reorder::WindowReverse(3).permutation(5), vec![2, 1, 0, 4, 3]);
        assert_eq!("window-reverse:3".parse::<Reorder>().unwrap(), Reorder::WindowReverse(3));
        assert!("window-reverse:1".parse::<Reorder>().is_err());
        assert!("shuffle".parse::<Reorder>().is_err());
    }

    #[test]
    fn identity_language_reproduces_base() {
        let mut s = spec(0, Reorder::Identity);
        s.corpus_size = 50;
        let corpus = generate_corpus(&s, &shape(), 11);
        let mut rng = derive_rng(11, &["mono", &s.tag]);
        let base = generate_base_sentences(&shape(), 50, &mut rng);
        assert_eq!(corpus.iter().map(|c| c.tokens.clone()).collect::<Vec<_>>(), base);
    }

    #[test]
    fn corpus_is_deterministic_and_lengths_in_range() {
        let cfg = CorpusConfig::default();
        let specs = cfg.language_specs(5);
        let a = generate_corpus(&specs[2], &cfg.sentence_shape(), 5);
        let b = generate_corpus(&specs[2], &cfg.sentence_shape(), 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (3..=12).contains(&s.tokens.len())));
        let c = generate_corpus(&specs[2], &cfg.sentence_shape(), 6);
        assert_ne!(a, c);
    }

    #[test]
    fn zipf_head_share() {
        // direct sampling oracle: share of the most frequent concept in 10k tokens
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zipf = Zipf::new(64.0, 1.2).unwrap();
        let mut counts = [0usize; 64];
        for _ in 0..10_000 {
            counts[zipf.sample(&mut rng) as usize - 1] += 1;
        }
        let top = *counts.iter().max().unwrap() as f64 / 10_000.0;
        assert!((0.25..=0.45).contains(&top), "{top}");
        assert_eq!(counts.iter().position(|c| *c == *counts.iter().max().unwrap()), Some(0));
    }

    #[test]
    fn make_parallel_gold_examples() {
        let base = [3, 1, 4, 1];
        let p = make_parallel(&base, &spec(0, Reorder::Identity), &spec(1, Reorder::Identity));
        assert_eq!(p.gold_alignment.unwrap(), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);

        let p = make_parallel(&base, &spec(0, Reorder::Identity), &spec(1, Reorder::AdjacentSwap));
        assert_eq!(p.gold_alignment.unwrap(), vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        assert_eq!(p.y.tokens, vec![1, 3, 1, 4]);

        let p = make_parallel(&[5, 6, 7], &spec(0, Reorder::Identity), &spec(1, Reorder::AdjacentSwap));
        assert_eq!(p.gold_alignment.unwrap(), vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn gold_links_connect_equal_concepts() {
        let cfg = CorpusConfig::default();
        let specs = cfg.language_specs(9);
        let par = generate_parallel(&specs[2], &specs[3], 50, &cfg.sentence_shape(), 9, "train");
        let (dx, dy) = (specs[2].decipher(), specs[3].decipher());
        for p in &par.pairs {
            let gold = p.gold_alignment.as_ref().unwrap();
            assert_eq!(gold.len(), p.y.tokens.len());
            let ys: HashSet<_> = gold.iter().map(|l| l.0).collect();
            let xs: HashSet<_> = gold.iter().map(|l| l.1).collect();
            assert_eq!(ys.len(), gold.len());
            assert_eq!(xs.len(), gold.len());
            for &(i, j) in gold {
                assert_eq!(dy[p.y.tokens[i]], dx[p.x.tokens[j]]);
            }
        }
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smoothed_probs(&[100, 10_000], 0.0), vec![0.5, 0.5]);
        let p = smoothed_probs(&[100, 900], 1.0);
        assert!((p[0] - 0.1).abs() < 1e-12 && (p[1] - 0.9).abs() < 1e-12);
        let p = smoothed_probs(&[100, 10_000], 0.7);
        let expect = 100f64.powf(0.7) / (100f64.powf(0.7) + 10_000f64.powf(0.7));
        assert!((p[0] - expect).abs() < 1e-12);
        assert!((p[0] - 0.038).abs() < 5e-4 && (p[1] - 0.962).abs() < 5e-4);
    }

    fn mono(lang: usize, n: usize) -> MonoCorpus {
        MonoCorpus {
            lang,
            sentences: (0..n).map(|k| Sentence { lang, tokens: vec![k % 8, 1, 2] }).collect(),
        }
    }

    #[test]
    fn batch_sampling_frequencies_follow_smoothing() {
        let corpora = [mono(0, 101), mono(1, 901)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut first = 0usize;
        let draws = 4000;
        for _ in 0..draws / 2 {
            let b = sample_batch(&corpora, &[], 2, 1.0, &mut rng).unwrap();
            first += b
                .origins
                .iter()
                .filter(|o| matches!(o, Origin::Mono { corpus: 0, .. }))
                .count();
        }
        let share = first as f64 / draws as f64;
        assert!((share - 0.1).abs() < 0.02, "{share}");
    }

    #[test]
    fn batch_entries_are_unique_and_split() {
        let cfg = CorpusConfig::default();
        let specs = cfg.language_specs(1);
        let par = generate_parallel(&specs[0], &specs[1], 10, &cfg.sentence_shape(), 1, "train");
        let corpora = [mono(0, 9)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&corpora, std::slice::from_ref(&par), 16, 0.7, &mut rng).unwrap();
        assert_eq!(b.pairs.len(), 16);
        assert_eq!(b.parallel_count(), 8);
        let uniq: HashSet<_> = b.origins.iter().map(|o| format!("{o:?}")).collect();
        assert_eq!(uniq.len(), 16);

        assert!(matches!(
            sample_batch(&corpora, &[], 9, 0.7, &mut rng),
            Err(Error::BatchSize(_))
        ));
        assert!(matches!(
            sample_batch(&corpora, &[], 1, 0.7, &mut rng),
            Err(Error::BatchSize(_))
        ));
    }

    #[test]
    fn encode_pair_layouts() {
        let vocab = Vocabulary::new(8, vec!["a".into(), "b".into()]);
        let pair = SentencePair::monolingual(
            Sentence { lang: 0, tokens: vec![1, 2] },
            Sentence { lang: 1, tokens: vec![3, 4] },
        );
        let full = encode_pair(&pair, &vocab, MaskRegime::Full, 32).unwrap();
        assert_eq!(full.tokens.len(), 7);
        assert_eq!(full.tokens[0], CLS);
        assert_eq!(full.tokens[3], SEP);
        assert_eq!(full.segments, vec![0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(full.positions, vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(full.x_span, 1..3);
        assert_eq!(full.y_span, Some(4..6));

        let t2s = encode_pair(&pair, &vocab, MaskRegime::Tgt2Src, 32).unwrap();
        assert_eq!(t2s.positions, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(t2s.segments, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(t2s.x_span, 0..2);
        assert_eq!(t2s.y_span, Some(3..5));

        assert!(matches!(
            encode_pair(&pair, &vocab, MaskRegime::Full, 6),
            Err(Error::Length { len: 7, max: 6 })
        ));
    }

    #[test]
    fn vocabulary_roundtrip() {
        let vocab = Vocabulary::new(64, vec!["l0".into(), "l1".into()]);
        assert_eq!(vocab.size(), 132);
        for id in 0..vocab.size() {
            assert_eq!(vocab.lookup(&vocab.token(id)), Some(id));
        }
        assert_eq!(vocab.token(vocab.id(1, 17)), "l1_17");
    }

    #[test]
    fn cipher_is_bijective() {
        let specs = CorpusConfig::default().language_specs(77);
        for s in &specs {
            let inv = s.decipher();
            for c in 0..64 {
                assert_eq!(inv[s.cipher[c]], c);
            }
        }
    }
}
