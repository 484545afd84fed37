//! A small long-document encoder: sliding-window self-attention with a
//! global first token, learned absolute positions, pre-LN transformer
//! blocks, mean-over-time pooling, and a linear+softmax classification
//! head. All forward math is `f64` and every gradient is written by hand so
//! it can be validated against central finite differences.
//!
//! Attention pattern: position `p > 0` attends `[p − w/2, p + w/2]`
//! intersected with valid positions, plus position 0; position 0 (the
//! `[CLS]` token) attends everything. Softmax normalizes over permitted
//! positions only.
//!
//! Dropout (inverted scaling) applies to the embedding sum and to the
//! feed-forward activations, and only when a dropout RNG is supplied —
//! evaluation and gradient checking run the deterministic path.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{accumulate_outer, gelu, gelu_grad, softmax_inplace, Mat};
use crate::seeding::{rng_for, derive_seed};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {reason}")]
    Config { reason: String },
    #[error("input of {len} tokens exceeds max_len {max_len}; inputs are never truncated silently")]
    Overlong { len: usize, max_len: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    BadTokenId { id: usize, vocab_size: usize },
    #[error("empty input")]
    EmptyInput,
}

/// How the document embedding is read off the tap layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Arithmetic mean over all positions (the documented default).
    Mean,
    /// The first position's vector only. Experimental alternative.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Feed-forward inner width.
    pub d_ff: usize,
    pub n_layers: usize,
    /// Window width; a token sees `window/2` neighbors on each side.
    pub window: usize,
    pub n_heads: usize,
    /// Which layer's hidden states are pooled (1..=n_layers). Defaults to
    /// the second-to-last layer.
    pub tap_layer: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub pool: PoolMode,
}

impl EncoderConfig {
    /// Defaults for a given vocabulary size: d_model 32, two layers,
    /// window 16, four heads, tap at the second-to-last layer.
    pub fn for_vocab(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 32,
            d_ff: 64,
            n_layers: 2,
            window: 16,
            n_heads: 4,
            tap_layer: 1,
            dropout_rate: 0.1,
            max_len: 512,
            pool: PoolMode::Mean,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |reason: String| Err(EncoderError::Config { reason });
        if self.vocab_size < SPECIALS.len() {
            return fail(format!("vocab_size must cover the {} special tokens", SPECIALS.len()));
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return fail("d_model and d_ff must be positive".into());
        }
        if self.n_layers < 2 {
            return fail("at least two layers are required".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.window < 2 || self.window % 2 != 0 {
            return fail(format!("window {} must be even and at least 2", self.window));
        }
        if self.tap_layer == 0 || self.tap_layer > self.n_layers {
            return fail(format!(
                "tap_layer {} must be in 1..={}",
                self.tap_layer, self.n_layers
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} must be in [0, 1)", self.dropout_rate));
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        Ok(())
    }
}

/// Special tokens, in id order. Index 0 is the unknown-token fallback.
pub const SPECIALS: [&str; 4] = ["[UNK]", "[CLS]", "[EOS]", "[PAR]"];
pub const UNK_ID: usize = 0;

/// Token string ↔ id table. Ids 0..4 are the special tokens; the rest are
/// the corpus tokens in sorted order, so a vocabulary is a pure function of
/// the token set it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = String;
    fn try_from(repr: VocabRepr) -> Result<Self, String> {
        if repr.tokens.len() < SPECIALS.len()
            || !SPECIALS.iter().zip(&repr.tokens).all(|(s, t)| s == t)
        {
            return Err(format!("vocabulary must start with the special tokens {SPECIALS:?}"));
        }
        let index = repr.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens: repr.tokens, index })
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> VocabRepr {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds from a token stream: specials first, then the distinct
    /// non-special tokens in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut distinct: std::collections::BTreeSet<&str> = tokens.into_iter().collect();
        for s in SPECIALS {
            distinct.remove(s);
        }
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(distinct.into_iter().map(String::from));
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the specials
    }

    /// Id for a token; unknown tokens map to `[UNK]` (id 0).
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// One transformer block's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Mat,
    pub bq: Vec<f64>,
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
    pub wo: Mat,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl EncoderLayer {
    fn init<R: Rng>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        EncoderLayer {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            wq: Mat::xavier(d, d, rng),
            bq: vec![0.0; d],
            wk: Mat::xavier(d, d, rng),
            bk: vec![0.0; d],
            wv: Mat::xavier(d, d, rng),
            bv: vec![0.0; d],
            wo: Mat::xavier(d, d, rng),
            bo: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            w1: Mat::xavier(d_ff, d, rng),
            b1: vec![0.0; d_ff],
            w2: Mat::xavier(d, d_ff, rng),
            b2: vec![0.0; d],
        }
    }
}

/// All encoder parameters, including the classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<EncoderLayer>,
    pub head_w: Mat,
    pub head_b: Vec<f64>,
}

impl EncoderState {
    /// Random initialization: uniform ±0.1 embeddings, Xavier projection
    /// matrices, zero biases, identity layer norms.
    pub fn init(cfg: &EncoderConfig, arity: usize, seed: u64) -> EncoderState {
        let mut rng = rng_for(seed, &["init", "encoder"]);
        EncoderState {
            tok_emb: Mat::uniform(cfg.vocab_size, cfg.d_model, 0.1, &mut rng),
            pos_emb: Mat::uniform(cfg.max_len, cfg.d_model, 0.1, &mut rng),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer::init(cfg.d_model, cfg.d_ff, &mut rng))
                .collect(),
            head_w: Mat::xavier(arity, cfg.d_model, &mut rng),
            head_b: vec![0.0; arity],
        }
    }

    pub fn arity(&self) -> usize {
        self.head_w.rows
    }

    /// Same shapes, all parameters zero — the gradient accumulator.
    pub fn zeros_like(&self) -> EncoderState {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Parameter tensors in the canonical order shared by `params_mut`,
    /// `named_params`, the optimizer, and the weights container.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.tok_emb.data, &self.pos_emb.data];
        for l in &self.layers {
            out.extend([
                &l.ln1_gamma,
                &l.ln1_beta,
                &l.wq.data,
                &l.bq,
                &l.wk.data,
                &l.bk,
                &l.wv.data,
                &l.bv,
                &l.wo.data,
                &l.bo,
                &l.ln2_gamma,
                &l.ln2_beta,
                &l.w1.data,
                &l.b1,
                &l.w2.data,
                &l.b2,
            ]);
        }
        out.push(&self.head_w.data);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.tok_emb.data, &mut self.pos_emb.data];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.wq.data,
                &mut l.bq,
                &mut l.wk.data,
                &mut l.bk,
                &mut l.wv.data,
                &mut l.bv,
                &mut l.wo.data,
                &mut l.bo,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.w1.data,
                &mut l.b1,
                &mut l.w2.data,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.head_w.data);
        out.push(&mut self.head_b);
        out
    }

    /// Tensor names parallel to `params()`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["tok_emb".to_owned(), "pos_emb".to_owned()];
        for i in 0..self.layers.len() {
            for field in [
                "ln1_gamma", "ln1_beta", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2",
            ] {
                out.push(format!("layer{i}.{field}"));
            }
        }
        out.push("head_w".to_owned());
        out.push("head_b".to_owned());
        out
    }
}

/// The complete classification model: config, vocabulary, parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcModel {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub state: EncoderState,
}

impl DcModel {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        arity: usize,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(EncoderError::Config {
                reason: format!(
                    "config vocab_size {} does not match vocabulary size {}",
                    config.vocab_size,
                    vocab.len()
                ),
            });
        }
        if arity < 2 {
            return Err(EncoderError::Config { reason: "head arity must be at least 2".into() });
        }
        let state = EncoderState::init(&config, arity, seed);
        Ok(DcModel { config, vocab, state })
    }

    /// Class probabilities for a token sequence (no dropout).
    pub fn predict(&self, tokens: &[String]) -> Result<Vec<f64>, EncoderError> {
        let ids = self.vocab.encode(tokens);
        let cache = encode_and_pool(&self.config, &self.state, &ids, None)?;
        Ok(classify_dc(&self.state, &cache.pooled))
    }
}

/// Permitted attention positions for each of `n` positions: `p > 0` sees
/// its window plus position 0; position 0 sees everything. Each set is
/// sorted ascending.
pub fn allowed_positions(n: usize, window: usize) -> Vec<Vec<usize>> {
    let half = window / 2;
    (0..n)
        .map(|p| {
            if p == 0 {
                (0..n).collect()
            } else {
                let lo = p.saturating_sub(half);
                let hi = (p + half).min(n - 1);
                let mut v = Vec::with_capacity(hi - lo + 2);
                if lo > 0 {
                    v.push(0);
                }
                v.extend(lo..=hi);
                v
            }
        })
        .collect()
}

struct LayerCache {
    ln1_xhat: Vec<Vec<f64>>,
    ln1_rstd: Vec<f64>,
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// attn[h][p] — softmax weights parallel to `allowed[p]`.
    attn: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    ln2_xhat: Vec<Vec<f64>>,
    ln2_rstd: Vec<f64>,
    b: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    /// Feed-forward activations after GELU and dropout (input to w2).
    gd: Vec<Vec<f64>>,
    ff_mask: Option<Vec<Vec<f64>>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct EncodeCache {
    pub ids: Vec<usize>,
    allowed: Vec<Vec<usize>>,
    emb_mask: Option<Vec<Vec<f64>>>,
    /// hidden[l][p] for l in 0..=layers_run.
    hidden: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
    /// The document embedding h_base.
    pub pooled: Vec<f64>,
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
    let y = xhat.iter().zip(gamma).zip(beta).map(|((xh, g), b)| xh * g + b).collect();
    (y, xhat, rstd)
}

/// dx += backward of layer norm; dgamma/dbeta accumulate.
fn layer_norm_backward(
    dy: &[f64],
    gamma: &[f64],
    xhat: &[f64],
    rstd: f64,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let d = dy.len() as f64;
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..dy.len() {
        let dxh = dy[i] * gamma[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[i];
        dgamma[i] += dy[i] * xhat[i];
        dbeta[i] += dy[i];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for i in 0..dy.len() {
        let dxh = dy[i] * gamma[i];
        dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let keep = 1.0 / (1.0 - rate);
    (0..rows)
        .map(|_| (0..cols).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
        .collect()
}

fn layer_forward(
    cfg: &EncoderConfig,
    layer: &EncoderLayer,
    x: &[Vec<f64>],
    allowed: &[Vec<usize>],
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
) -> (Vec<Vec<f64>>, LayerCache) {
    let n = x.len();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut ln1_xhat = Vec::with_capacity(n);
    let mut ln1_rstd = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for xp in x {
        let (y, xhat, rstd) = layer_norm(xp, &layer.ln1_gamma, &layer.ln1_beta);
        a.push(y);
        ln1_xhat.push(xhat);
        ln1_rstd.push(rstd);
    }

    let mut q = vec![vec![0.0; d]; n];
    let mut k = vec![vec![0.0; d]; n];
    let mut v = vec![vec![0.0; d]; n];
    for p in 0..n {
        layer.wq.matvec(&a[p], &layer.bq, &mut q[p]);
        layer.wk.matvec(&a[p], &layer.bk, &mut k[p]);
        layer.wv.matvec(&a[p], &layer.bv, &mut v[p]);
    }

    let mut attn: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); heads];
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        for p in 0..n {
            let mut scores: Vec<f64> = allowed[p]
                .iter()
                .map(|&u| {
                    q[p][lo..hi].iter().zip(&k[u][lo..hi]).map(|(a, b)| a * b).sum::<f64>() * scale
                })
                .collect();
            softmax_inplace(&mut scores);
            for (ai, &u) in allowed[p].iter().enumerate() {
                let w = scores[ai];
                for (c, vv) in ctx[p][lo..hi].iter_mut().zip(&v[u][lo..hi]) {
                    *c += w * vv;
                }
            }
            attn[h].push(scores);
        }
    }

    let mut x_mid = Vec::with_capacity(n);
    for p in 0..n {
        let mut o = vec![0.0; d];
        layer.wo.matvec(&ctx[p], &layer.bo, &mut o);
        x_mid.push(x[p].iter().zip(&o).map(|(xv, ov)| xv + ov).collect::<Vec<f64>>());
    }

    let mut ln2_xhat = Vec::with_capacity(n);
    let mut ln2_rstd = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for xm in &x_mid {
        let (y, xhat, rstd) = layer_norm(xm, &layer.ln2_gamma, &layer.ln2_beta);
        b.push(y);
        ln2_xhat.push(xhat);
        ln2_rstd.push(rstd);
    }

    let ff_mask = dropout_rng
        .as_deref_mut()
        .filter(|_| cfg.dropout_rate > 0.0)
        .map(|rng| dropout_mask(n, cfg.d_ff, cfg.dropout_rate, rng));

    let mut t = Vec::with_capacity(n);
    let mut gd = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let mut tp = vec![0.0; cfg.d_ff];
        layer.w1.matvec(&b[p], &layer.b1, &mut tp);
        let mut gp: Vec<f64> = tp.iter().map(|&z| gelu(z)).collect();
        if let Some(mask) = &ff_mask {
            for (g, m) in gp.iter_mut().zip(&mask[p]) {
                *g *= m;
            }
        }
        let mut f = vec![0.0; d];
        layer.w2.matvec(&gp, &layer.b2, &mut f);
        out.push(x_mid[p].iter().zip(&f).map(|(xm, fv)| xm + fv).collect::<Vec<f64>>());
        t.push(tp);
        gd.push(gp);
    }

    (
        out,
        LayerCache {
            ln1_xhat,
            ln1_rstd,
            a,
            q,
            k,
            v,
            attn,
            ctx,
            ln2_xhat,
            ln2_rstd,
            b,
            t,
            gd,
            ff_mask,
        },
    )
}

fn forward_internal(
    cfg: &EncoderConfig,
    state: &EncoderState,
    ids: &[usize],
    layers_to_run: usize,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<EncodeCache, EncoderError> {
    if ids.is_empty() {
        return Err(EncoderError::EmptyInput);
    }
    if ids.len() > cfg.max_len {
        return Err(EncoderError::Overlong { len: ids.len(), max_len: cfg.max_len });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(EncoderError::BadTokenId { id, vocab_size: cfg.vocab_size });
    }
    let n = ids.len();
    let d = cfg.d_model;
    let allowed = allowed_positions(n, cfg.window);

    let emb_mask = dropout_rng
        .as_deref_mut()
        .filter(|_| cfg.dropout_rate > 0.0)
        .map(|rng| dropout_mask(n, d, cfg.dropout_rate, rng));
    let mut x0 = Vec::with_capacity(n);
    for (p, &id) in ids.iter().enumerate() {
        let tok = state.tok_emb.row(id);
        let pos = state.pos_emb.row(p);
        let mut xp: Vec<f64> = tok.iter().zip(pos).map(|(t, ps)| t + ps).collect();
        if let Some(mask) = &emb_mask {
            for (x, m) in xp.iter_mut().zip(&mask[p]) {
                *x *= m;
            }
        }
        x0.push(xp);
    }

    let mut hidden = vec![x0];
    let mut layer_caches = Vec::with_capacity(layers_to_run);
    for l in 0..layers_to_run {
        let (out, cache) =
            layer_forward(cfg, &state.layers[l], hidden.last().unwrap(), &allowed, &mut dropout_rng);
        hidden.push(out);
        layer_caches.push(cache);
    }

    Ok(EncodeCache {
        ids: ids.to_vec(),
        allowed,
        emb_mask,
        hidden,
        layers: layer_caches,
        pooled: Vec::new(),
    })
}

/// Full deterministic forward: per-layer hidden states for all layers
/// (index 0 is the embedded input, index ℓ the output of layer ℓ).
pub fn encode(
    cfg: &EncoderConfig,
    state: &EncoderState,
    ids: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>, EncoderError> {
    Ok(forward_internal(cfg, state, ids, cfg.n_layers, None)?.hidden)
}

/// Mean over positions.
pub fn pool_mean(hidden: &[Vec<f64>]) -> Vec<f64> {
    let n = hidden.len() as f64;
    let d = hidden[0].len();
    let mut out = vec![0.0; d];
    for h in hidden {
        for (o, v) in out.iter_mut().zip(h) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Forward up to the tap layer and pool the document embedding. Layers
/// above the tap are not run — they cannot influence the embedding.
pub fn encode_and_pool(
    cfg: &EncoderConfig,
    state: &EncoderState,
    ids: &[usize],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<EncodeCache, EncoderError> {
    let mut cache = forward_internal(cfg, state, ids, cfg.tap_layer, dropout_rng)?;
    let tap = cache.hidden.last().expect("tap layer ran");
    cache.pooled = match cfg.pool {
        PoolMode::Mean => pool_mean(tap),
        PoolMode::Cls => tap[0].clone(),
    };
    Ok(cache)
}

/// Softmax class probabilities from a document embedding.
pub fn classify_dc(state: &EncoderState, pooled: &[f64]) -> Vec<f64> {
    let mut logits = vec![0.0; state.head_w.rows];
    state.head_w.matvec(pooled, &state.head_b, &mut logits);
    softmax_inplace(&mut logits);
    logits
}

fn layer_backward(
    cfg: &EncoderConfig,
    layer: &EncoderLayer,
    cache: &LayerCache,
    x: &[Vec<f64>],
    allowed: &[Vec<usize>],
    d_out: &[Vec<f64>],
    grads: &mut EncoderLayer,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward branch: out = x_mid + w2·drop(gelu(w1·LN2(x_mid)+b1))+b2.
    let mut d_xmid: Vec<Vec<f64>> = d_out.to_vec();
    for p in 0..n {
        let d_f = &d_out[p];
        accumulate_outer(&mut grads.w2, &mut grads.b2, d_f, &cache.gd[p]);
        let mut d_gd = vec![0.0; cfg.d_ff];
        layer.w2.matvec_backward_input(d_f, &mut d_gd);
        if let Some(mask) = &cache.ff_mask {
            for (g, m) in d_gd.iter_mut().zip(&mask[p]) {
                *g *= m;
            }
        }
        let d_t: Vec<f64> =
            d_gd.iter().zip(&cache.t[p]).map(|(g, &tv)| g * gelu_grad(tv)).collect();
        accumulate_outer(&mut grads.w1, &mut grads.b1, &d_t, &cache.b[p]);
        let mut d_b = vec![0.0; d];
        layer.w1.matvec_backward_input(&d_t, &mut d_b);
        layer_norm_backward(
            &d_b,
            &layer.ln2_gamma,
            &cache.ln2_xhat[p],
            cache.ln2_rstd[p],
            &mut grads.ln2_gamma,
            &mut grads.ln2_beta,
            &mut d_xmid[p],
        );
    }

    // Attention branch: x_mid = x + wo·ctx + bo.
    let mut d_ctx = vec![vec![0.0; d]; n];
    for p in 0..n {
        accumulate_outer(&mut grads.wo, &mut grads.bo, &d_xmid[p], &cache.ctx[p]);
        layer.wo.matvec_backward_input(&d_xmid[p], &mut d_ctx[p]);
    }

    let mut d_q = vec![vec![0.0; d]; n];
    let mut d_k = vec![vec![0.0; d]; n];
    let mut d_v = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        for p in 0..n {
            let alpha = &cache.attn[h][p];
            let d_ctx_h = &d_ctx[p][lo..hi];
            // dα and dV.
            let mut d_alpha = vec![0.0; alpha.len()];
            for (ai, &u) in allowed[p].iter().enumerate() {
                let mut dot = 0.0;
                for (dc, vv) in d_ctx_h.iter().zip(&cache.v[u][lo..hi]) {
                    dot += dc * vv;
                }
                d_alpha[ai] = dot;
                let w = alpha[ai];
                for (dv, dc) in d_v[u][lo..hi].iter_mut().zip(d_ctx_h) {
                    *dv += w * dc;
                }
            }
            // Softmax backward.
            let inner: f64 = alpha.iter().zip(&d_alpha).map(|(a, da)| a * da).sum();
            for (ai, &u) in allowed[p].iter().enumerate() {
                let ds = alpha[ai] * (d_alpha[ai] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for i in 0..dh {
                    d_q[p][lo + i] += ds * cache.k[u][lo + i];
                    d_k[u][lo + i] += ds * cache.q[p][lo + i];
                }
            }
        }
    }

    // Projections and LN1; residual closes the loop.
    let mut d_x = d_xmid.clone();
    for p in 0..n {
        accumulate_outer(&mut grads.wq, &mut grads.bq, &d_q[p], &cache.a[p]);
        accumulate_outer(&mut grads.wk, &mut grads.bk, &d_k[p], &cache.a[p]);
        accumulate_outer(&mut grads.wv, &mut grads.bv, &d_v[p], &cache.a[p]);
        let mut d_a = vec![0.0; d];
        layer.wq.matvec_backward_input(&d_q[p], &mut d_a);
        layer.wk.matvec_backward_input(&d_k[p], &mut d_a);
        layer.wv.matvec_backward_input(&d_v[p], &mut d_a);
        layer_norm_backward(
            &d_a,
            &layer.ln1_gamma,
            &cache.ln1_xhat[p],
            cache.ln1_rstd[p],
            &mut grads.ln1_gamma,
            &mut grads.ln1_beta,
            &mut d_x[p],
        );
    }
    d_x
}

/// Backpropagates a gradient on the pooled document embedding through the
/// layers that ran (tap and below) into `grads`. Layers above the tap get
/// no gradient — the pooled embedding does not depend on them.
pub fn backward_from_pooled(
    cfg: &EncoderConfig,
    state: &EncoderState,
    cache: &EncodeCache,
    d_pooled: &[f64],
    grads: &mut EncoderState,
) {
    let layers_ran = cache.layers.len();
    let n = cache.ids.len();
    let tap_hidden = &cache.hidden[layers_ran];
    let mut d_hidden: Vec<Vec<f64>> = match cfg.pool {
        PoolMode::Mean => {
            let inv = 1.0 / n as f64;
            (0..n).map(|_| d_pooled.iter().map(|g| g * inv).collect()).collect()
        }
        PoolMode::Cls => {
            let mut dh = vec![vec![0.0; tap_hidden[0].len()]; n];
            dh[0] = d_pooled.to_vec();
            dh
        }
    };

    for l in (0..layers_ran).rev() {
        d_hidden = layer_backward(
            cfg,
            &state.layers[l],
            &cache.layers[l],
            &cache.hidden[l],
            &cache.allowed,
            &d_hidden,
            &mut grads.layers[l],
        );
    }

    for (p, &id) in cache.ids.iter().enumerate() {
        let mut dx = d_hidden[p].clone();
        if let Some(mask) = &cache.emb_mask {
            for (g, m) in dx.iter_mut().zip(&mask[p]) {
                *g *= m;
            }
        }
        for (t, g) in grads.tok_emb.row_mut(id).iter_mut().zip(&dx) {
            *t += g;
        }
        for (ps, g) in grads.pos_emb.row_mut(p).iter_mut().zip(&dx) {
            *ps += g;
        }
    }
}

/// Mean cross-entropy loss and exact gradients over a batch of
/// (token ids, gold class) pairs. With `dropout_seed`, each example gets an
/// independent derived dropout RNG, so results are identical however the
/// batch is processed; `None` disables dropout (evaluation, gradient
/// checks).
pub fn dc_loss_and_grads(
    cfg: &EncoderConfig,
    state: &EncoderState,
    batch: &[(Vec<usize>, usize)],
    dropout_seed: Option<u64>,
) -> Result<(f64, EncoderState, usize), EncoderError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = state.zeros_like();
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, (ids, class)) in batch.iter().enumerate() {
        assert!(*class < state.arity(), "class {} out of range", class);
        let mut rng = dropout_seed.map(|s| {
            ChaCha8Rng::seed_from_u64(derive_seed(s, &["dropout", &i.to_string()]))
        });
        let cache = encode_and_pool(cfg, state, ids, rng.as_mut())?;
        let probs = classify_dc(state, &cache.pooled);
        loss -= probs[*class].max(1e-300).ln() * inv_b;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(c, _)| c)
            .unwrap();
        if argmax == *class {
            correct += 1;
        }
        // d loss / d logits = (probs - onehot) / B.
        let mut d_logits: Vec<f64> = probs.iter().map(|p| p * inv_b).collect();
        d_logits[*class] -= inv_b;
        accumulate_outer(&mut grads.head_w, &mut grads.head_b, &d_logits, &cache.pooled);
        let mut d_pooled = vec![0.0; cfg.d_model];
        state.head_w.matvec_backward_input(&d_logits, &mut d_pooled);
        backward_from_pooled(cfg, state, &cache, &d_pooled, &mut grads);
    }
    Ok((loss, grads, correct))
}

/// Classification accuracy and mean loss over a dataset slice, without
/// gradients or dropout.
pub fn evaluate_dc(
    cfg: &EncoderConfig,
    state: &EncoderState,
    examples: &[(Vec<usize>, usize)],
) -> Result<(f64, f64), EncoderError> {
    assert!(!examples.is_empty(), "evaluation set must be non-empty");
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (ids, class) in examples {
        let cache = encode_and_pool(cfg, state, ids, None)?;
        let probs = classify_dc(state, &cache.pooled);
        loss -= probs[*class].max(1e-300).ln();
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(c, _)| c)
            .unwrap();
        if argmax == *class {
            correct += 1;
        }
    }
    Ok((loss / examples.len() as f64, correct as f64 / examples.len() as f64))
}
