//! Pre-training losses: masked/translation language modelling, in-batch
//! sentence alignment and bidirectional word alignment, plus their sum.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_pair, encode_sentence, is_special, Batch, SentencePair, Vocabulary, MASK, NUM_SPECIAL};
use crate::encoder::{cross_attention_vars, Bound, Direction, EncodedVars, Encoder, EncoderOutput, MaskRegime};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub const DEFAULT_MASK_RATE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Which positions of a sequence are corrupted and how.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskingPlan {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    /// Token written at each position after corruption.
    pub replacements: Vec<usize>,
    pub originals: Vec<usize>,
}

impl MaskingPlan {
    pub fn apply(&self, tokens: &mut [usize]) {
        for (&p, &r) in self.positions.iter().zip(&self.replacements) {
            tokens[p] = r;
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Selects each non-special position independently with probability `rate`
/// (forcing one when the draw selects none), then assigns 80% `[MASK]`, 10% a
/// random non-special token, 10% unchanged.
pub fn select_mask_positions(
    z: &[usize],
    vocab_size: usize,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<MaskingPlan> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Input(format!("mask rate {rate} outside (0, 1]")));
    }
    let maskable: Vec<usize> = (0..z.len()).filter(|&p| !is_special(z[p])).collect();
    if maskable.is_empty() {
        return Err(Error::Input("no maskable tokens".into()));
    }
    let mut positions: Vec<usize> = maskable
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < rate)
        .collect();
    if positions.is_empty() {
        positions.push(maskable[rng.random_range(0..maskable.len())]);
    }
    let mut actions = Vec::with_capacity(positions.len());
    let mut replacements = Vec::with_capacity(positions.len());
    for &p in &positions {
        let u: f64 = rng.random();
        let (a, r) = if u < 0.8 {
            (MaskAction::Mask, MASK)
        } else if u < 0.9 {
            (MaskAction::Random, rng.random_range(NUM_SPECIAL..vocab_size))
        } else {
            (MaskAction::Keep, z[p])
        };
        actions.push(a);
        replacements.push(r);
    }
    let originals = positions.iter().map(|&p| z[p]).collect();
    Ok(MaskingPlan {
        positions,
        actions,
        replacements,
        originals,
    })
}

/// Enabled objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Objectives {
    pub mlm: bool,
    pub tlm: bool,
    pub wa: bool,
    pub sa: bool,
}

impl Objectives {
    pub const ALL: Objectives = Objectives {
        mlm: true,
        tlm: true,
        wa: true,
        sa: true,
    };

    /// The four rungs of the ablation ladder, in order.
    pub fn ladder() -> [Objectives; 4] {
        let mut rungs = [Objectives::ALL; 4];
        rungs[0] = Objectives { tlm: false, wa: false, sa: false, ..Self::ALL };
        rungs[1] = Objectives { wa: false, sa: false, ..Self::ALL };
        rungs[2] = Objectives { sa: false, ..Self::ALL };
        rungs
    }

    pub fn uses_parallel(self) -> bool {
        self.tlm || self.wa || self.sa
    }

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.mlm, "MLM"), (self.tlm, "TLM"), (self.wa, "WA"), (self.sa, "SA")] {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }
}

impl fmt::Display for Objectives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label().to_lowercase().replace('+', ","))
    }
}

impl FromStr for Objectives {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut o = Objectives {
            mlm: false,
            tlm: false,
            wa: false,
            sa: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "mlm" => o.mlm = true,
                "tlm" => o.tlm = true,
                "wa" => o.wa = true,
                "sa" => o.sa = true,
                other => return Err(format!("unknown objective `{other}` (mlm, tlm, wa, sa)")),
            }
        }
        if !(o.mlm || o.tlm || o.wa || o.sa) {
            return Err("no objective enabled".into());
        }
        Ok(o)
    }
}

impl TryFrom<String> for Objectives {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Objectives> for String {
    fn from(o: Objectives) -> String {
        o.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub mlm: f64,
    pub sa: f64,
    pub wa: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            mlm: 1.0,
            sa: 1.0,
            wa: 1.0,
        }
    }
}

/// Per-objective losses of one batch. `mlm` averages over every masked token
/// of the batch, monolingual and (with TLM) parallel alike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mlm: f64,
    pub sa: f64,
    pub wa: f64,
    pub total: f64,
    pub masked_tokens: usize,
    pub parallel_pairs: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.mlm.is_finite() && self.sa.is_finite() && self.wa.is_finite() && self.total.is_finite()
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mlm={} sa={} wa={} total={}",
            self.mlm, self.sa, self.wa, self.total
        )
    }
}

/// Mean of the top-layer states over a non-empty span.
pub fn sentence_embedding<T: Scalar>(out: &EncoderOutput<T>, span: Range<usize>) -> Result<Tensor<T>> {
    if span.is_empty() {
        return Err(Error::Input("empty sentence span".into()));
    }
    let top = out.top();
    let (n, d) = top.dims2();
    if span.end > n {
        return Err(Error::Index { index: span.end - 1, len: n });
    }
    let mut acc = vec![T::zero(); d];
    for r in span.clone() {
        for (a, v) in acc.iter_mut().zip(top.row(r)) {
            *a = *a + *v;
        }
    }
    let k = T::from_usize(span.len()).unwrap();
    Ok(Tensor::vector(acc.into_iter().map(|v| v / k).collect()))
}

pub fn sentence_embedding_var<T: Scalar>(graph: &mut Graph<T>, top: Var, span: Range<usize>) -> Result<Var> {
    if span.is_empty() {
        return Err(Error::Input("empty sentence span".into()));
    }
    let rows: Vec<usize> = span.collect();
    let sel = graph.select_rows(top, &rows)?;
    Ok(graph.mean_rows(sel))
}

/// In-batch softmax over target embeddings: row `b` of `cx` should pick row `b` of `cy`.
pub fn sentence_alignment_var<T: Scalar>(graph: &mut Graph<T>, cx: Var, cy: Var) -> Result<Var> {
    let (b, d) = graph.value(cx).dims2();
    if graph.value(cy).dims2() != (b, d) {
        return Err(Error::Dimension {
            op: "sentence_alignment_loss",
            left: graph.value(cx).shape().to_vec(),
            right: graph.value(cy).shape().to_vec(),
        });
    }
    if b < 2 {
        return Err(Error::BatchSize(format!("{b} aligned rows; need at least 2 for negatives")));
    }
    let scores = graph.matmul_nt(cx, cy)?;
    let targets: Vec<usize> = (0..b).collect();
    graph.cross_entropy_rows(scores, &targets)
}

pub fn sentence_alignment_loss<T: Scalar>(cx: &Tensor<T>, cy: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let a = g.constant(cx.clone());
    let b = g.constant(cy.clone());
    let l = sentence_alignment_var(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// `1 - mean_h Σ_ij fwd_h[i,j]·bwd_h[j,i] / min(|x|,|y|)` for per-head
/// `fwd: |y|×|x|` and `bwd: |x|×|y|`.
pub fn word_alignment_var<T: Scalar>(graph: &mut Graph<T>, fwd: &[Var], bwd: &[Var]) -> Result<Var> {
    if fwd.is_empty() || fwd.len() != bwd.len() {
        return Err(Error::Shape(format!(
            "head count mismatch: {} forward vs {} backward",
            fwd.len(),
            bwd.len()
        )));
    }
    let (ly, lx) = graph.value(fwd[0]).dims2();
    let mut traces = Vec::with_capacity(fwd.len());
    for (&f, &b) in fwd.iter().zip(bwd) {
        if graph.value(f).dims2() != (ly, lx) || graph.value(b).dims2() != (lx, ly) {
            return Err(Error::Dimension {
                op: "word_alignment_loss",
                left: graph.value(f).shape().to_vec(),
                right: graph.value(b).shape().to_vec(),
            });
        }
        let bt = graph.transpose(b);
        let prod = graph.mul(f, bt)?;
        traces.push(graph.sum(prod));
    }
    let mut acc = traces[0];
    for &t in &traces[1..] {
        acc = graph.add(acc, t)?;
    }
    let denom = T::from_usize(fwd.len() * lx.min(ly)).unwrap();
    let scaled = graph.scale(acc, -T::one() / denom);
    Ok(graph.add_scalar(scaled, T::one()))
}

pub fn word_alignment_loss<T: Scalar>(fwd: &[Tensor<T>], bwd: &[Tensor<T>]) -> Result<T> {
    let mut g = Graph::new();
    let f: Vec<Var> = fwd.iter().map(|t| g.constant(t.clone())).collect();
    let b: Vec<Var> = bwd.iter().map(|t| g.constant(t.clone())).collect();
    let l = word_alignment_var(&mut g, &f, &b)?;
    Ok(g.value(l).item())
}

/// Everything the combined loss needs besides the batch.
pub struct LossContext<'a, T> {
    pub encoder: &'a Encoder<T>,
    pub vocab: &'a Vocabulary,
    pub objectives: Objectives,
    pub weights: ObjectiveWeights,
    pub mask_rate: f64,
}

/// Per-pair pieces of the word-alignment term.
pub struct PairAttention {
    pub fwd: Vec<Var>,
    pub bwd: Vec<Var>,
    pub t2s: EncodedVars,
    pub s2t: EncodedVars,
}

impl<T: Scalar> LossContext<'_, T> {
    fn max_positions(&self) -> usize {
        self.encoder.config().max_positions
    }

    /// Encodes a pair under the FULL mask with a fresh masking plan applied.
    pub fn masked_pass(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        pair: &SentencePair,
        rng: &mut ChaCha8Rng,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<usize>)> {
        let mut input = encode_pair(pair, self.vocab, MaskRegime::Full, self.max_positions())?;
        let plan = select_mask_positions(&input.tokens, self.vocab.size(), self.mask_rate, rng)?;
        plan.apply(&mut input.tokens);
        let enc = self.encoder.encode(graph, bound, &input, dropout)?;
        let logits = self.encoder.mlm_logits(graph, bound, &enc, &plan.positions)?;
        Ok((logits, plan.originals))
    }

    pub fn pair_attention(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        pair: &SentencePair,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<PairAttention> {
        let t2s_in = encode_pair(pair, self.vocab, MaskRegime::Tgt2Src, self.max_positions())?;
        let s2t_in = encode_pair(pair, self.vocab, MaskRegime::Src2Tgt, self.max_positions())?;
        let t2s = self.encoder.encode(graph, bound, &t2s_in, dropout.as_deref_mut())?;
        let s2t = self.encoder.encode(graph, bound, &s2t_in, dropout)?;
        let fwd = cross_attention_vars(graph, &t2s, Direction::YtoX)?;
        let bwd = cross_attention_vars(graph, &s2t, Direction::XtoY)?;
        Ok(PairAttention { fwd, bwd, t2s, s2t })
    }

    /// Separately encoded, mean-pooled embeddings of both sides of a pair.
    pub fn pair_embeddings(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        pair: &SentencePair,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let mut side = |s| -> Result<Var> {
            let input = encode_sentence(s, self.vocab, self.max_positions())?;
            let enc = self.encoder.encode(graph, bound, &input, dropout.as_deref_mut())?;
            sentence_embedding_var(graph, enc.top(), input.x_span.clone())
        };
        let cx = side(&pair.x)?;
        let cy = side(&pair.y)?;
        Ok((cx, cy))
    }

    /// Builds the weighted sum of the enabled objectives on `graph`.
    pub fn combined_loss(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        batch: &Batch,
        mask_rng: &mut ChaCha8Rng,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, LossBreakdown)> {
        let obj = self.objectives;
        if batch.pairs.is_empty() {
            return Err(Error::BatchComposition("empty batch".into()));
        }
        let parallel: Vec<&SentencePair> = batch.pairs.iter().filter(|p| p.is_parallel).collect();
        if (obj.wa || obj.sa) && parallel.is_empty() {
            return Err(Error::BatchComposition("alignment objectives need parallel pairs".into()));
        }
        if obj.sa && parallel.len() < 2 {
            return Err(Error::BatchComposition(format!(
                "sentence alignment needs at least 2 parallel pairs, batch has {}",
                parallel.len()
            )));
        }

        let mut breakdown = LossBreakdown {
            parallel_pairs: parallel.len(),
            ..Default::default()
        };
        let mut terms: Vec<Var> = Vec::new();

        if obj.mlm || obj.tlm {
            let mut logits = Vec::new();
            let mut targets = Vec::new();
            for pair in &batch.pairs {
                let wanted = if pair.is_parallel { obj.tlm } else { obj.mlm };
                if !wanted {
                    continue;
                }
                let (l, t) = self.masked_pass(graph, bound, pair, mask_rng, dropout.as_deref_mut())?;
                logits.push(l);
                targets.extend(t);
            }
            if logits.is_empty() {
                return Err(Error::BatchComposition(
                    "masked-LM objective enabled but no pair in the batch contributes to it".into(),
                ));
            }
            let all = graph.concat_rows(&logits)?;
            let mlm = graph.cross_entropy_rows(all, &targets)?;
            breakdown.mlm = graph.value(mlm).item().to_f64().unwrap();
            breakdown.masked_tokens = targets.len();
            terms.push(graph.scale(mlm, T::lit(self.weights.mlm)));
        }

        if obj.wa {
            let mut per_pair = Vec::with_capacity(parallel.len());
            for pair in &parallel {
                let att = self.pair_attention(graph, bound, pair, dropout.as_deref_mut())?;
                per_pair.push(word_alignment_var(graph, &att.fwd, &att.bwd)?);
            }
            let mut wa = per_pair[0];
            for &t in &per_pair[1..] {
                wa = graph.add(wa, t)?;
            }
            let wa = graph.scale(wa, T::one() / T::from_usize(per_pair.len()).unwrap());
            breakdown.wa = graph.value(wa).item().to_f64().unwrap();
            terms.push(graph.scale(wa, T::lit(self.weights.wa)));
        }

        if obj.sa {
            let mut xs = Vec::with_capacity(parallel.len());
            let mut ys = Vec::with_capacity(parallel.len());
            for pair in &parallel {
                let (cx, cy) = self.pair_embeddings(graph, bound, pair, dropout.as_deref_mut())?;
                xs.push(cx);
                ys.push(cy);
            }
            let cx = graph.concat_rows(&xs)?;
            let cy = graph.concat_rows(&ys)?;
            let sa = sentence_alignment_var(graph, cx, cy)?;
            breakdown.sa = graph.value(sa).item().to_f64().unwrap();
            terms.push(graph.scale(sa, T::lit(self.weights.sa)));
        }

        let mut total = terms[0];
        for &t in &terms[1..] {
            total = graph.add(total, t)?;
        }
        breakdown.total = graph.value(total).item().to_f64().unwrap();
        Ok((total, breakdown))
    }
}
