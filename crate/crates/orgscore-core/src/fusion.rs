//! Auxiliary paragraph-label encoder and the fusion/scoring head.
//!
//! The auxiliary path embeds each paragraph's function label (I/B/R/C),
//! runs a bidirectional LSTM over the label sequence, and reads off the
//! concatenated per-position output at the last position: the forward
//! state at step M next to the backward state at step M (each direction
//! carries `d_aux / 2` units, so `h_aux` has width `d_aux`).
//!
//! The head concatenates the document embedding with `h_aux`, maps it
//! through `z = tanh(W · [h_base; h_aux])` (no bias), and scores with
//! `y = sigmoid(w · z + b)`, so predictions live strictly inside (0, 1).
//! Training minimizes mean squared error against normalized gold scores.
//!
//! As in [`crate::encoder`], every gradient is hand-written and checked
//! against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParagraphLabel;
use crate::encoder::{
    backward_from_pooled, encode_and_pool, EncodeCache, EncoderConfig, EncoderError,
    EncoderState, Vocab,
};
use crate::nn::{accumulate_outer, sigmoid, Mat};
use crate::seeding::{derive_seed, rng_for};

/// Paragraph function labels: I, B, R, C.
pub const N_LABELS: usize = 4;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion config: {reason}")]
    Config { reason: String },
    #[error("empty label sequence")]
    EmptySequence,
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("prediction/gold length mismatch ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    /// Label-embedding width.
    pub d_para: usize,
    /// Total BiLSTM output width; each direction gets `d_aux / 2` units.
    pub d_aux: usize,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig { d_para: 16, d_aux: 200 }
    }
}

impl AuxConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.d_para == 0 {
            return Err(FusionError::Config { reason: "d_para must be positive".into() });
        }
        if self.d_aux < 2 || self.d_aux % 2 != 0 {
            return Err(FusionError::Config {
                reason: format!("d_aux {} must be even and at least 2", self.d_aux),
            });
        }
        Ok(())
    }

    fn d_dir(&self) -> usize {
        self.d_aux / 2
    }
}

/// One LSTM direction. Gate order in the stacked matrices is
/// input, forget, cell-candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    /// Input weights, shape (4·d_dir, d_para).
    pub w: Mat,
    /// Recurrent weights, shape (4·d_dir, d_dir).
    pub u: Mat,
    /// Gate biases, length 4·d_dir.
    pub b: Vec<f64>,
}

impl LstmDirection {
    fn init<R: Rng>(d_in: usize, d_dir: usize, rng: &mut R) -> Self {
        LstmDirection {
            w: Mat::xavier(4 * d_dir, d_in, rng),
            u: Mat::xavier(4 * d_dir, d_dir, rng),
            b: vec![0.0; 4 * d_dir],
        }
    }
}

/// Auxiliary encoder parameters: label embeddings plus both LSTM
/// directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    pub label_emb: Mat,
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
}

impl AuxState {
    pub fn init(cfg: &AuxConfig, seed: u64) -> AuxState {
        let mut rng = rng_for(seed, &["init", "aux"]);
        AuxState {
            label_emb: Mat::uniform(N_LABELS, cfg.d_para, 0.1, &mut rng),
            fwd: LstmDirection::init(cfg.d_para, cfg.d_dir(), &mut rng),
            bwd: LstmDirection::init(cfg.d_para, cfg.d_dir(), &mut rng),
        }
    }

    pub fn zeros_like(&self) -> AuxState {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        vec![
            &self.label_emb.data,
            &self.fwd.w.data,
            &self.fwd.u.data,
            &self.fwd.b,
            &self.bwd.w.data,
            &self.bwd.u.data,
            &self.bwd.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.label_emb.data,
            &mut self.fwd.w.data,
            &mut self.fwd.u.data,
            &mut self.fwd.b,
            &mut self.bwd.w.data,
            &mut self.bwd.u.data,
            &mut self.bwd.b,
        ]
    }

    pub fn param_names(&self) -> Vec<String> {
        ["label_emb", "fwd.w", "fwd.u", "fwd.b", "bwd.w", "bwd.u", "bwd.b"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

struct LstmCache {
    /// Inputs in processing order.
    xs: Vec<Vec<f64>>,
    i: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn lstm_forward(dir: &LstmDirection, xs: Vec<Vec<f64>>) -> LstmCache {
    let steps = xs.len();
    let dh = dir.u.cols;
    let mut cache = LstmCache {
        xs,
        i: Vec::with_capacity(steps),
        f: Vec::with_capacity(steps),
        g: Vec::with_capacity(steps),
        o: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
    };
    let zero = vec![0.0; dh];
    for s in 0..steps {
        let h_prev = if s == 0 { &zero } else { &cache.h[s - 1] };
        let c_prev = if s == 0 { &zero } else { &cache.c[s - 1] };
        let mut z = vec![0.0; 4 * dh];
        dir.w.matvec(&cache.xs[s], &dir.b, &mut z);
        let mut rec = vec![0.0; 4 * dh];
        dir.u.matvec(h_prev, &[], &mut rec);
        for (zv, rv) in z.iter_mut().zip(&rec) {
            *zv += rv;
        }
        let i: Vec<f64> = z[0..dh].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[dh..2 * dh].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * dh..3 * dh].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * dh..4 * dh].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> =
            (0..dh).map(|d| f[d] * c_prev[d] + i[d] * g[d]).collect();
        let h: Vec<f64> = (0..dh).map(|d| o[d] * c[d].tanh()).collect();
        cache.i.push(i);
        cache.f.push(f);
        cache.g.push(g);
        cache.o.push(o);
        cache.c.push(c);
        cache.h.push(h);
    }
    cache
}

/// Backpropagation through time. `g_ext[s]` is the external gradient on
/// the hidden state of processing step `s`. Returns gradients on the
/// inputs, in processing order; parameter gradients accumulate into
/// `grads`.
fn lstm_backward(
    dir: &LstmDirection,
    cache: &LstmCache,
    g_ext: &[Vec<f64>],
    grads: &mut LstmDirection,
) -> Vec<Vec<f64>> {
    let steps = cache.xs.len();
    let dh = dir.u.cols;
    let zero = vec![0.0; dh];
    let mut d_xs = vec![vec![0.0; dir.w.cols]; steps];
    let mut d_h_carry = vec![0.0; dh];
    let mut d_c_carry = vec![0.0; dh];
    for s in (0..steps).rev() {
        let h_prev = if s == 0 { &zero } else { &cache.h[s - 1] };
        let c_prev = if s == 0 { &zero } else { &cache.c[s - 1] };
        let (i, f, g, o) = (&cache.i[s], &cache.f[s], &cache.g[s], &cache.o[s]);
        let mut dz = vec![0.0; 4 * dh];
        for d in 0..dh {
            let d_h = g_ext[s][d] + d_h_carry[d];
            let tanh_c = cache.c[s][d].tanh();
            let d_o = d_h * tanh_c;
            let d_c = d_c_carry[d] + d_h * o[d] * (1.0 - tanh_c * tanh_c);
            let d_f = d_c * c_prev[d];
            let d_i = d_c * g[d];
            let d_g = d_c * i[d];
            d_c_carry[d] = d_c * f[d];
            dz[d] = d_i * i[d] * (1.0 - i[d]);
            dz[dh + d] = d_f * f[d] * (1.0 - f[d]);
            dz[2 * dh + d] = d_g * (1.0 - g[d] * g[d]);
            dz[3 * dh + d] = d_o * o[d] * (1.0 - o[d]);
        }
        accumulate_outer(&mut grads.w, &mut grads.b, &dz, &cache.xs[s]);
        accumulate_outer(&mut grads.u, &mut [], &dz, h_prev);
        dir.w.matvec_backward_input(&dz, &mut d_xs[s]);
        d_h_carry.iter_mut().for_each(|v| *v = 0.0);
        dir.u.matvec_backward_input(&dz, &mut d_h_carry);
    }
    d_xs
}

/// Forward-pass record for the auxiliary encoder.
pub struct AuxCache {
    label_ids: Vec<usize>,
    fwd: LstmCache,
    bwd: LstmCache,
    /// The auxiliary representation (width d_aux).
    pub h_aux: Vec<f64>,
}

/// Embeds the label sequence, runs both LSTM directions, and returns the
/// concatenated output at the last position: the forward state after all
/// M steps next to the backward state at position M (the backward
/// direction's first processing step).
pub fn encode_labels(
    state: &AuxState,
    labels: &[ParagraphLabel],
) -> Result<AuxCache, FusionError> {
    if labels.is_empty() {
        return Err(FusionError::EmptySequence);
    }
    let label_ids: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let embed = |ids: &[usize]| -> Vec<Vec<f64>> {
        ids.iter().map(|&id| state.label_emb.row(id).to_vec()).collect()
    };
    let fwd = lstm_forward(&state.fwd, embed(&label_ids));
    let rev_ids: Vec<usize> = label_ids.iter().rev().copied().collect();
    let bwd = lstm_forward(&state.bwd, embed(&rev_ids));
    let mut h_aux = fwd.h.last().expect("non-empty").clone();
    h_aux.extend_from_slice(&bwd.h[0]); // backward state at sequence position M
    Ok(AuxCache { label_ids, fwd, bwd, h_aux })
}

/// Backpropagates a gradient on `h_aux` through both LSTM directions and
/// the label embeddings into `grads`.
pub fn backward_aux(
    state: &AuxState,
    cache: &AuxCache,
    d_h_aux: &[f64],
    grads: &mut AuxState,
) {
    let steps = cache.label_ids.len();
    let d_dir = cache.fwd.h[0].len();
    assert_eq!(d_h_aux.len(), 2 * d_dir, "h_aux gradient width mismatch");

    // Forward direction: gradient lands on its final processing step.
    let mut g_ext_fwd = vec![vec![0.0; d_dir]; steps];
    g_ext_fwd[steps - 1] = d_h_aux[..d_dir].to_vec();
    let d_xs_fwd = lstm_backward(&state.fwd, &cache.fwd, &g_ext_fwd, &mut grads.fwd);

    // Backward direction: gradient lands on its first processing step
    // (sequence position M).
    let mut g_ext_bwd = vec![vec![0.0; d_dir]; steps];
    g_ext_bwd[0] = d_h_aux[d_dir..].to_vec();
    let d_xs_bwd = lstm_backward(&state.bwd, &cache.bwd, &g_ext_bwd, &mut grads.bwd);

    for (s, d_x) in d_xs_fwd.iter().enumerate() {
        let row = grads.label_emb.row_mut(cache.label_ids[s]);
        for (r, g) in row.iter_mut().zip(d_x) {
            *r += g;
        }
    }
    for (s, d_x) in d_xs_bwd.iter().enumerate() {
        // Processing step s of the backward direction is sequence
        // position steps - 1 - s.
        let row = grads.label_emb.row_mut(cache.label_ids[steps - 1 - s]);
        for (r, g) in row.iter_mut().zip(d_x) {
            *r += g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Document-embedding width (the encoder's d_model).
    pub d_base: usize,
    /// Auxiliary width (AuxConfig::d_aux).
    pub d_aux: usize,
    /// Fused feature width.
    pub d_fuse: usize,
}

impl HeadConfig {
    pub fn new(d_base: usize, d_aux: usize, d_fuse: usize) -> HeadConfig {
        HeadConfig { d_base, d_aux, d_fuse }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.d_base == 0 || self.d_aux == 0 || self.d_fuse == 0 {
            return Err(FusionError::Config {
                reason: "head dimensions must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Fusion matrix plus the scalar scoring layer. The scoring bias is kept
/// as a length-1 vector so every parameter tensor shares the `Vec<f64>`
/// optimizer interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadState {
    /// Shape (d_fuse, d_base + d_aux); the fusion layer has no bias.
    pub w_fuse: Mat,
    pub w_score: Vec<f64>,
    pub b_score: Vec<f64>,
}

impl HeadState {
    pub fn init(cfg: &HeadConfig, seed: u64) -> HeadState {
        let mut rng = rng_for(seed, &["init", "head"]);
        HeadState {
            w_fuse: Mat::xavier(cfg.d_fuse, cfg.d_base + cfg.d_aux, &mut rng),
            w_score: Mat::xavier(1, cfg.d_fuse, &mut rng).data,
            b_score: vec![0.0],
        }
    }

    pub fn zeros_like(&self) -> HeadState {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        vec![&self.w_fuse.data, &self.w_score, &self.b_score]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.w_fuse.data, &mut self.w_score, &mut self.b_score]
    }

    pub fn param_names(&self) -> Vec<String> {
        ["w_fuse", "w_score", "b_score"].iter().map(|s| s.to_string()).collect()
    }
}

/// Forward-pass record for the head.
pub struct FuseCache {
    u: Vec<f64>,
    z: Vec<f64>,
    pub y: f64,
}

/// `z = tanh(W · [h_base; h_aux])`, `y = sigmoid(w · z + b)`.
pub fn fuse_and_score(
    head: &HeadState,
    h_base: &[f64],
    h_aux: &[f64],
) -> Result<FuseCache, FusionError> {
    let expected = head.w_fuse.cols;
    let got = h_base.len() + h_aux.len();
    if got != expected {
        return Err(FusionError::WidthMismatch { expected, got });
    }
    let mut u = Vec::with_capacity(got);
    u.extend_from_slice(h_base);
    u.extend_from_slice(h_aux);
    let mut z = vec![0.0; head.w_fuse.rows];
    head.w_fuse.matvec(&u, &[], &mut z);
    z.iter_mut().for_each(|v| *v = v.tanh());
    let s: f64 = head.w_score.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + head.b_score[0];
    let y = sigmoid(s);
    Ok(FuseCache { u, z, y })
}

/// Backpropagates `d_y = dL/dy` through the head. Returns the gradients
/// on `(h_base, h_aux)`; parameter gradients accumulate into `grads`.
pub fn backward_head(
    head: &HeadState,
    cache: &FuseCache,
    d_y: f64,
    d_base_width: usize,
    grads: &mut HeadState,
) -> (Vec<f64>, Vec<f64>) {
    let d_s = d_y * cache.y * (1.0 - cache.y);
    for (gw, z) in grads.w_score.iter_mut().zip(&cache.z) {
        *gw += d_s * z;
    }
    grads.b_score[0] += d_s;
    let d_zpre: Vec<f64> = head
        .w_score
        .iter()
        .zip(&cache.z)
        .map(|(w, z)| d_s * w * (1.0 - z * z))
        .collect();
    accumulate_outer(&mut grads.w_fuse, &mut [], &d_zpre, &cache.u);
    let mut d_u = vec![0.0; head.w_fuse.cols];
    head.w_fuse.matvec_backward_input(&d_zpre, &mut d_u);
    let d_aux = d_u.split_off(d_base_width);
    (d_u, d_aux)
}

/// Mean squared error between predictions and normalized gold scores.
pub fn scoring_loss(preds: &[f64], golds: &[f64]) -> Result<f64, FusionError> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(FusionError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    let n = preds.len() as f64;
    Ok(preds.iter().zip(golds).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n)
}

/// The complete organization-scoring model: document encoder, auxiliary
/// label encoder, and fusion head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub enc_config: EncoderConfig,
    pub vocab: Vocab,
    pub enc: EncoderState,
    pub aux_config: AuxConfig,
    pub aux: AuxState,
    pub head_config: HeadConfig,
    pub head: HeadState,
}

/// Gradients for every [`ScoringModel`] parameter, in the same shapes.
pub struct ScoringGrads {
    pub enc: EncoderState,
    pub aux: AuxState,
    pub head: HeadState,
}

/// One scoring example: token ids, paragraph labels, normalized gold.
pub type ScoringExample = (Vec<usize>, Vec<ParagraphLabel>, f64);

impl ScoringModel {
    /// Builds around an existing (typically pre-trained) encoder. The
    /// auxiliary encoder and head are freshly initialized from `seed`.
    pub fn from_encoder(
        enc_config: EncoderConfig,
        vocab: Vocab,
        enc: EncoderState,
        aux_config: AuxConfig,
        d_fuse: usize,
        seed: u64,
    ) -> Result<ScoringModel, FusionError> {
        enc_config.validate()?;
        aux_config.validate()?;
        let head_config = HeadConfig::new(enc_config.d_model, aux_config.d_aux, d_fuse);
        head_config.validate()?;
        let aux = AuxState::init(&aux_config, seed);
        let head = HeadState::init(&head_config, seed);
        Ok(ScoringModel { enc_config, vocab, enc, aux_config, aux, head_config, head })
    }

    pub fn zero_grads(&self) -> ScoringGrads {
        ScoringGrads {
            enc: self.enc.zeros_like(),
            aux: self.aux.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Every parameter tensor: encoder, then auxiliary, then head.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = self.enc.params();
        v.extend(self.aux.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = self.enc.params_mut();
        v.extend(self.aux.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    /// Auxiliary + head parameters only — what trains in fixed mode.
    pub fn aux_head_params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = self.aux.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    /// Predicted score in (0, 1) for one essay (no dropout).
    pub fn score(
        &self,
        ids: &[usize],
        labels: &[ParagraphLabel],
    ) -> Result<f64, FusionError> {
        let (y, _, _) = score_forward(self, ids, labels, None)?;
        Ok(y)
    }
}

impl ScoringGrads {
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = self.enc.params();
        v.extend(self.aux.params());
        v.extend(self.head.params());
        v
    }

    pub fn aux_head_params(&self) -> Vec<&Vec<f64>> {
        let mut v = self.aux.params();
        v.extend(self.head.params());
        v
    }
}

/// One forward pass through the fused model.
pub fn score_forward(
    model: &ScoringModel,
    ids: &[usize],
    labels: &[ParagraphLabel],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, EncodeCache, AuxCache), FusionError> {
    let enc_cache = encode_and_pool(&model.enc_config, &model.enc, ids, dropout_rng)?;
    let aux_cache = encode_labels(&model.aux, labels)?;
    let fuse = fuse_and_score(&model.head, &enc_cache.pooled, &aux_cache.h_aux)?;
    let y = fuse.y;
    drop(fuse);
    Ok((y, enc_cache, aux_cache))
}

/// Mean squared error and exact gradients over a batch. With
/// `dropout_seed`, each example draws an independent derived dropout RNG
/// so results are identical regardless of batch processing order; `None`
/// disables dropout.
pub fn score_loss_and_grads(
    model: &ScoringModel,
    batch: &[ScoringExample],
    dropout_seed: Option<u64>,
) -> Result<(f64, ScoringGrads), FusionError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = model.zero_grads();
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (i, (ids, labels, gold)) in batch.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| {
            ChaCha8Rng::seed_from_u64(derive_seed(s, &["dropout", &i.to_string()]))
        });
        let enc_cache = encode_and_pool(&model.enc_config, &model.enc, ids, rng.as_mut())?;
        let aux_cache = encode_labels(&model.aux, labels)?;
        let fuse = fuse_and_score(&model.head, &enc_cache.pooled, &aux_cache.h_aux)?;
        let err = fuse.y - gold;
        loss += err * err * inv_b;
        let d_y = 2.0 * err * inv_b;
        let (d_base, d_aux) = backward_head(
            &model.head,
            &fuse,
            d_y,
            model.head_config.d_base,
            &mut grads.head,
        );
        backward_from_pooled(&model.enc_config, &model.enc, &enc_cache, &d_base, &mut grads.enc);
        backward_aux(&model.aux, &aux_cache, &d_aux, &mut grads.aux);
    }
    Ok((loss, grads))
}
