//! Pre-norm transformer encoder with the four attention-mask regimes used by
//! the pre-training objectives.

use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Precision, Scalar, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Filled in from the corpus when left at zero in a config file.
    #[serde(default)]
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Reuse the token embedding table as the masked-LM output projection.
    #[serde(default = "default_tied")]
    pub tie_embeddings: bool,
    #[serde(default)]
    pub precision: Precision,
}

fn default_tied() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            layers: 2,
            heads: 2,
            hidden: 32,
            ffn_dim: 64,
            max_positions: 32,
            dropout: 0.0,
            tie_embeddings: true,
            precision: Precision::Train32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.vocab_size", self.vocab_size),
            ("model.layers", self.layers),
            ("model.heads", self.heads),
            ("model.hidden", self.hidden),
            ("model.ffn_dim", self.ffn_dim),
            ("model.max_positions", self.max_positions),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(
                "model.hidden",
                format!("{} is not divisible by heads={}", self.hidden, self.heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskRegime {
    /// Every position attends everywhere.
    Full,
    /// Source attends to source; target token `i` attends to the source and
    /// to target tokens strictly before `i`.
    Tgt2Src,
    /// Mirror of [`MaskRegime::Tgt2Src`] with the roles swapped.
    Src2Tgt,
    /// Block-diagonal: each sentence only sees itself.
    Separate,
}

/// Row-major boolean attention mask; `allowed(q, k)` says whether query `q`
/// may attend to key `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(n * n);
        for q in 0..n {
            for k in 0..n {
                allow.push(f(q, k));
            }
        }
        Mask { n, allow }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.n + k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allow
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.n..(q + 1) * self.n]
    }
}

/// Attention mask over the concatenation `[x; y]` of two blocks of lengths
/// `len_x` and `len_y`.
pub fn build_mask(regime: MaskRegime, len_x: usize, len_y: usize) -> Result<Mask> {
    if len_x == 0 {
        return Err(Error::EmptySource);
    }
    if len_y == 0 && regime != MaskRegime::Separate {
        return Err(Error::Input(format!(
            "{regime:?} mask needs a non-empty target block"
        )));
    }
    let n = len_x + len_y;
    let in_x = |p: usize| p < len_x;
    let mask = match regime {
        MaskRegime::Full => Mask::from_fn(n, |_, _| true),
        MaskRegime::Separate => Mask::from_fn(n, |q, k| in_x(q) == in_x(k)),
        MaskRegime::Tgt2Src => Mask::from_fn(n, |q, k| {
            if in_x(q) {
                in_x(k)
            } else {
                in_x(k) || k < q
            }
        }),
        MaskRegime::Src2Tgt => Mask::from_fn(n, |q, k| {
            if in_x(q) {
                !in_x(k) || k < q
            } else {
                !in_x(k)
            }
        }),
    };
    Ok(mask)
}

/// One encoder input sequence together with the layout needed to interpret
/// its outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub positions: Vec<usize>,
    pub mask: Mask,
    pub regime: MaskRegime,
    /// Positions of the source sentence's real tokens.
    pub x_span: Range<usize>,
    /// Positions of the target sentence's real tokens, if any.
    pub y_span: Option<Range<usize>>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        let i = self.tensors.iter().position(|t| t.data().iter().any(|v| !v.is_finite()))?;
        Some(&self.names[i])
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct ParamIds {
    token: usize,
    position: usize,
    segment: usize,
    layers: Vec<LayerIds>,
    final_g: usize,
    final_b: usize,
    /// `None` when tied to the token embeddings.
    head_w: Option<usize>,
    head_b: usize,
}

/// Graph handles for every parameter, created once per tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Graph handles for one encoded sequence.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    /// `g^1 .. g^L`; the last entry has the final layer norm applied.
    pub hidden: Vec<Var>,
    /// `[layer][head]` post-softmax attention, `n×n` each.
    pub attention: Vec<Vec<Var>>,
    /// Top-layer scaled attention scores before masking and softmax, per head.
    pub top_scores: Vec<Var>,
    pub regime: MaskRegime,
    pub x_span: Range<usize>,
    pub y_span: Option<Range<usize>>,
}

impl EncodedVars {
    pub fn top(&self) -> Var {
        *self.hidden.last().unwrap()
    }
}

/// Plain-value encoder output.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    pub hidden_states: Vec<Tensor<T>>,
    pub attention: Vec<Vec<Tensor<T>>>,
    pub top_scores: Vec<Tensor<T>>,
    pub regime: MaskRegime,
    pub x_span: Range<usize>,
    pub y_span: Option<Range<usize>>,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn from_vars(graph: &Graph<T>, vars: &EncodedVars) -> Self {
        EncoderOutput {
            hidden_states: vars.hidden.iter().map(|v| graph.value(*v).clone()).collect(),
            attention: vars
                .attention
                .iter()
                .map(|heads| heads.iter().map(|v| graph.value(*v).clone()).collect())
                .collect(),
            top_scores: vars.top_scores.iter().map(|v| graph.value(*v).clone()).collect(),
            regime: vars.regime,
            x_span: vars.x_span.clone(),
            y_span: vars.y_span.clone(),
        }
    }

    pub fn top(&self) -> &Tensor<T> {
        self.hidden_states.last().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Target rows attending over source columns, from a `Tgt2Src` pass.
    YtoX,
    /// Source rows attending over target columns, from a `Src2Tgt` pass.
    XtoY,
}

impl Direction {
    fn regime(self) -> MaskRegime {
        match self {
            Direction::YtoX => MaskRegime::Tgt2Src,
            Direction::XtoY => MaskRegime::Src2Tgt,
        }
    }
}

fn cross_spans(
    regime: MaskRegime,
    x_span: &Range<usize>,
    y_span: &Option<Range<usize>>,
    direction: Direction,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if regime != direction.regime() {
        return Err(Error::Usage(format!(
            "{direction:?} attention needs a {:?} pass, got {regime:?}",
            direction.regime()
        )));
    }
    let y = y_span
        .clone()
        .ok_or_else(|| Error::Usage("cross attention needs a target sentence".into()))?;
    let (rows, cols) = match direction {
        Direction::YtoX => (y, x_span.clone()),
        Direction::XtoY => (x_span.clone(), y),
    };
    Ok((rows.collect(), cols.collect()))
}

/// Keeps the listed rows and columns of an attention matrix and rescales each
/// kept row to sum to one.
pub fn restrict_and_renormalize<T: Scalar>(
    attention: &Tensor<T>,
    rows: &[usize],
    cols: &[usize],
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let a = g.constant(attention.clone());
    let s = g.select(a, rows, cols)?;
    let r = g.row_normalize(s)?;
    Ok(g.value(r).clone())
}

/// Per-head top-layer cross attention, restricted to the real tokens of the
/// two sentences and renormalised row-wise.
///
/// Renormalising a restricted block of a softmax equals a softmax over the same
/// block of the scores; the latter is used because it cannot underflow to an
/// all-zero row.
pub fn cross_attention<T: Scalar>(
    out: &EncoderOutput<T>,
    direction: Direction,
) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::new();
    let scores: Vec<Var> = out.top_scores.iter().map(|s| g.constant(s.clone())).collect();
    let vars = restricted_softmax(&mut g, &scores, out.regime, &out.x_span, &out.y_span, direction)?;
    Ok(vars.into_iter().map(|v| g.value(v).clone()).collect())
}

fn restricted_softmax<T: Scalar>(
    graph: &mut Graph<T>,
    scores: &[Var],
    regime: MaskRegime,
    x_span: &Range<usize>,
    y_span: &Option<Range<usize>>,
    direction: Direction,
) -> Result<Vec<Var>> {
    let (rows, cols) = cross_spans(regime, x_span, y_span, direction)?;
    let allow = vec![true; rows.len() * cols.len()];
    scores
        .iter()
        .map(|&s| {
            let block = graph.select(s, &rows, &cols)?;
            graph.masked_softmax_rows(block, &allow)
        })
        .collect()
}

/// Differentiable counterpart of [`cross_attention`].
pub fn cross_attention_vars<T: Scalar>(
    graph: &mut Graph<T>,
    enc: &EncodedVars,
    direction: Direction,
) -> Result<Vec<Var>> {
    restricted_softmax(graph, &enc.top_scores, enc.regime, &enc.x_span, &enc.y_span, direction)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    ids: ParamIds,
}

impl<T: Scalar> Encoder<T> {
    /// Fresh parameters: normal(0, 0.02) weights, unit layer-norm gains, zero biases.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let mut params = ParamSet::new();
        let (v, d, f) = (config.vocab_size, config.hidden, config.ffn_dim);
        let rand_t = |shape: &[usize], rng: &mut dyn RngCore| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
            Tensor::from_parts(shape.to_vec(), data)
        };
        let ones = |n: usize| Tensor::filled(&[n], T::one());
        let zeros = |n: usize| Tensor::zeros(&[n]);

        let token = params.push("embed.token".into(), rand_t(&[v, d], rng));
        let position = params.push("embed.position".into(), rand_t(&[config.max_positions, d], rng));
        let segment = params.push("embed.segment".into(), rand_t(&[2, d], rng));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                ln1_g: params.push(p("attn_norm.gain"), ones(d)),
                ln1_b: params.push(p("attn_norm.bias"), zeros(d)),
                wq: params.push(p("attn.wq"), rand_t(&[d, d], rng)),
                wk: params.push(p("attn.wk"), rand_t(&[d, d], rng)),
                wv: params.push(p("attn.wv"), rand_t(&[d, d], rng)),
                wo: params.push(p("attn.wo"), rand_t(&[d, d], rng)),
                bo: params.push(p("attn.bo"), zeros(d)),
                ln2_g: params.push(p("ffn_norm.gain"), ones(d)),
                ln2_b: params.push(p("ffn_norm.bias"), zeros(d)),
                w1: params.push(p("ffn.w1"), rand_t(&[d, f], rng)),
                b1: params.push(p("ffn.b1"), zeros(f)),
                w2: params.push(p("ffn.w2"), rand_t(&[f, d], rng)),
                b2: params.push(p("ffn.b2"), zeros(d)),
            });
        }
        let final_g = params.push("final_norm.gain".into(), ones(d));
        let final_b = params.push("final_norm.bias".into(), zeros(d));
        let head_w = (!config.tie_embeddings).then(|| params.push("mlm_head.weight".into(), rand_t(&[d, v], rng)));
        let head_b = params.push("mlm_head.bias".into(), zeros(v));
        Ok(Encoder {
            config,
            params,
            ids: ParamIds {
                token,
                position,
                segment,
                layers,
                final_g,
                final_b,
                head_w,
                head_b,
            },
        })
    }

    /// Rebuilds an encoder from tensors listed in declaration order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Self::new(config, &mut rng)?;
        if tensors.len() != enc.params.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, got {}",
                enc.params.len(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.into_iter().enumerate() {
            if t.shape() != enc.params.tensors[i].shape() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    enc.params.names[i],
                    t.shape(),
                    enc.params.tensors[i].shape()
                )));
            }
            enc.params.tensors[i] = t;
        }
        Ok(enc)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Makes every masked prediction uniform: zeroes the output projection,
    /// or with tied embeddings the final layer norm feeding it.
    pub fn zero_mlm_head(&mut self) {
        let ids = match self.ids.head_w {
            Some(w) => vec![w, self.ids.head_b],
            None => vec![self.ids.final_g, self.ids.final_b, self.ids.head_b],
        };
        for id in ids {
            self.params.tensors[id].data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        let mut config = self.config.clone();
        config.precision = U::PRECISION;
        Encoder {
            config,
            params: ParamSet {
                names: self.params.names.clone(),
                tensors: self.params.tensors.iter().map(|t| t.cast()).collect(),
            },
            ids: self.ids.clone(),
        }
    }

    /// Records every parameter on `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.tensors.iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.tensors.iter().map(|t| graph.constant(t.clone())).collect(),
        }
    }

    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let n = input.tokens.len();
        if n == 0 {
            return Err(Error::Input("empty sequence".into()));
        }
        if input.segments.len() != n || input.positions.len() != n || input.mask.len() != n {
            return Err(Error::Shape(format!(
                "tokens {n}, segments {}, positions {}, mask {}",
                input.segments.len(),
                input.positions.len(),
                input.mask.len()
            )));
        }
        if n > self.config.max_positions {
            return Err(Error::Length {
                len: n,
                max: self.config.max_positions,
            });
        }
        if let Some(&p) = input.positions.iter().find(|&&p| p >= self.config.max_positions) {
            return Err(Error::Length {
                len: p + 1,
                max: self.config.max_positions,
            });
        }
        if let Some(q) = (0..n).find(|&q| !input.mask.row(q).iter().any(|a| *a)) {
            return Err(Error::Mask(format!("row {q} has no allowed column")));
        }
        Ok(())
    }

    /// Runs the encoder on `graph`. Dropout is applied only when `dropout_rng`
    /// is given and the configured rate is positive.
    pub fn encode(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        input: &EncoderInput,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncodedVars> {
        self.check_input(input)?;
        let p = |id: usize| bound.vars[id];
        let eps = T::lit(LN_EPS);
        let cfg = &self.config;
        let n = input.tokens.len();
        let dh = cfg.head_dim();
        let score_scale = T::one() / T::from_usize(dh).unwrap().sqrt();

        let tok = graph.gather(p(self.ids.token), &input.tokens)?;
        let pos = graph.gather(p(self.ids.position), &input.positions)?;
        let seg = graph.gather(p(self.ids.segment), &input.segments)?;
        let mut x = graph.add(tok, pos)?;
        x = graph.add(x, seg)?;

        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut attention = Vec::with_capacity(cfg.layers);
        let mut top_scores = Vec::with_capacity(cfg.heads);
        for layer in &self.ids.layers {
            let h = graph.layer_norm(x, p(layer.ln1_g), p(layer.ln1_b), eps)?;
            let q = graph.matmul(h, p(layer.wq))?;
            let k = graph.matmul(h, p(layer.wk))?;
            let v = graph.matmul(h, p(layer.wv))?;
            let mut contexts = Vec::with_capacity(cfg.heads);
            let mut probs = Vec::with_capacity(cfg.heads);
            top_scores.clear();
            for head in 0..cfg.heads {
                let qh = graph.slice_cols(q, head * dh, dh)?;
                let kh = graph.slice_cols(k, head * dh, dh)?;
                let vh = graph.slice_cols(v, head * dh, dh)?;
                let scores = graph.matmul_nt(qh, kh)?;
                let scores = graph.scale(scores, score_scale);
                top_scores.push(scores);
                let a = graph.masked_softmax_rows(scores, input.mask.as_slice())?;
                contexts.push(graph.matmul(a, vh)?);
                probs.push(a);
            }
            let ctx = graph.concat_cols(&contexts)?;
            let mut o = graph.matmul(ctx, p(layer.wo))?;
            o = graph.add_row(o, p(layer.bo))?;
            o = self.dropout(graph, o, dropout_rng.as_deref_mut())?;
            x = graph.add(x, o)?;

            let h = graph.layer_norm(x, p(layer.ln2_g), p(layer.ln2_b), eps)?;
            let mut f = graph.matmul(h, p(layer.w1))?;
            f = graph.add_row(f, p(layer.b1))?;
            f = graph.gelu(f);
            f = graph.matmul(f, p(layer.w2))?;
            f = graph.add_row(f, p(layer.b2))?;
            f = self.dropout(graph, f, dropout_rng.as_deref_mut())?;
            x = graph.add(x, f)?;

            hidden.push(x);
            attention.push(probs);
        }
        let top = graph.layer_norm(x, p(self.ids.final_g), p(self.ids.final_b), eps)?;
        *hidden.last_mut().unwrap() = top;
        debug_assert_eq!(graph.value(top).shape(), &[n, cfg.hidden]);

        Ok(EncodedVars {
            hidden,
            attention,
            top_scores,
            regime: input.regime,
            x_span: input.x_span.clone(),
            y_span: input.y_span.clone(),
        })
    }

    fn dropout(&self, graph: &mut Graph<T>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let rate = self.config.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = graph.value(x).shape().to_vec();
        let n = graph.value(x).numel();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let m = graph.constant(Tensor::from_parts(shape, mask));
        graph.mul(x, m)
    }

    /// MLM logits for the listed rows of the top layer.
    pub fn mlm_logits(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        enc: &EncodedVars,
        positions: &[usize],
    ) -> Result<Var> {
        let rows = graph.select_rows(enc.top(), positions)?;
        let logits = match self.ids.head_w {
            Some(w) => graph.matmul(rows, bound.vars[w])?,
            None => graph.matmul_nt(rows, bound.vars[self.ids.token])?,
        };
        graph.add_row(logits, bound.vars[self.ids.head_b])
    }

    /// Inference-only forward pass returning plain tensors.
    pub fn forward(&self, input: &EncoderInput) -> Result<EncoderOutput<T>> {
        let mut graph = Graph::new();
        let bound = self.bind_frozen(&mut graph);
        let vars = self.encode(&mut graph, &bound, input, None)?;
        Ok(EncoderOutput::from_vars(&graph, &vars))
    }
}
