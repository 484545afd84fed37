//! Training and evaluation harness: two-step classification pre-training,
//! scoring fine-tuning under k-fold cross-validation with early stopping
//! and a dropout grid, low-resource training-size sweeps, Wilcoxon
//! signed-rank significance tests, and embedding export with principal
//! components.
//!
//! Determinism contract: given (seed, config, data), every reported metric
//! is reproducible. Epoch shuffles, dropout masks, fold assignments, and
//! subsamples all come from seeds derived with named parts, and all
//! reductions run in a fixed order, so neither thread count nor map
//! iteration order can change a result.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::{normalize_score, rescale_score, CorpusError, Essay, ScoreScale};
use crate::dataset::{example_tokens, DcDataset, DcExample};
use crate::encoder::{
    dc_loss_and_grads, encode_and_pool, evaluate_dc, DcModel, EncoderError, Vocab,
};
use crate::fusion::{
    score_loss_and_grads, scoring_loss, AuxConfig, FusionError, ScoringExample, ScoringModel,
};
use crate::nn::Adam;
use crate::seeding::{derive_seed, rng_for};
use crate::text_analysis::{label_paragraphs, RebuttalMarkers};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model head has {model} classes but the dataset has {dataset}")]
    ArityMismatch { model: usize, dataset: usize },
    #[error("{which} split is empty")]
    EmptySplit { which: &'static str },
    #[error("too few essays: need at least {needed}, got {got}")]
    TooFewEssays { needed: usize, got: usize },
    #[error("essay {essay_id} has no gold score")]
    MissingGold { essay_id: String },
    #[error("invalid training setup: {reason}")]
    InvalidConfig { reason: String },
    #[error("paired samples differ in length ({a} vs {b})")]
    PairLengthMismatch { a: usize, b: usize },
    #[error("too few pairs for the signed-rank test: need {needed}, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// All parameters train, encoder included.
    Finetune,
    /// The encoder is frozen bit-identically; only the auxiliary encoder
    /// and the fusion/scoring head train.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving validation epochs tolerated before
    /// stopping.
    pub patience: usize,
    /// Dropout applied by the encoder during training forward passes.
    pub dropout_rate: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl TrainConfig {
    /// First pre-training step: batch 4, lr 1e-5, patience 5.
    pub fn pretrain_step1(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 4,
            max_epochs: 100,
            patience: 5,
            dropout_rate: 0.1,
            mode: TrainMode::Finetune,
            seed,
        }
    }

    /// Second pre-training step: batch 2, otherwise as step 1.
    pub fn pretrain_step2(seed: u64) -> TrainConfig {
        TrainConfig { batch_size: 2, ..TrainConfig::pretrain_step1(seed) }
    }

    /// Scoring: batch 2, patience 12; lr 1e-5 when fine-tuning the
    /// encoder, 1e-3 when it is fixed.
    pub fn scoring(mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: match mode {
                TrainMode::Finetune => 1e-5,
                TrainMode::Fixed => 1e-3,
            },
            batch_size: 2,
            max_epochs: 100,
            patience: 12,
            dropout_rate: 0.5,
            mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail =
            |reason: String| Err(TrainError::InvalidConfig { reason });
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return fail(format!(
                "patience {} must be in 1..={}",
                self.patience, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} must be in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

/// What [`EarlyStopper::observe`] says about the epoch just finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best metric — snapshot the model now.
    Improved,
    NoImprovement,
    /// Patience exhausted — stop and restore the best snapshot.
    Stop,
}

/// Tracks the best validation metric and counts consecutive
/// non-improving epochs. The caller owns the model snapshots; the run's
/// result is always the state at the best epoch, never the last one.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    higher_is_better: bool,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, higher_is_better: bool) -> EarlyStopper {
        assert!(patience > 0, "patience must be positive");
        EarlyStopper {
            patience,
            higher_is_better,
            best: if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY },
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        let improved = if self.higher_is_better {
            metric > self.best
        } else {
            metric < self.best
        };
        if improved {
            self.best = metric;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// FNV-1a over the parameter bit patterns — detects any single-bit change,
/// used to prove the fixed mode leaves the encoder untouched.
pub fn params_checksum(params: &[&Vec<f64>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for v in p.iter() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    h
}

/// Token strings → vocabulary ids, paired with the gold class.
pub fn encode_examples(vocab: &Vocab, examples: &[DcExample]) -> Vec<(Vec<usize>, usize)> {
    examples.iter().map(|e| (vocab.encode(&e.tokens), e.class_index)).collect()
}

/// Per-step pre-training outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    /// Best validation accuracy over the run.
    pub best_accuracy: f64,
    /// Epoch (0-based) that produced it.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub step1: StepReport,
    pub step2: Option<StepReport>,
}

fn train_dc_step(
    model: &mut DcModel,
    dataset: &DcDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<StepReport, TrainError> {
    if dataset.train.is_empty() {
        return Err(TrainError::EmptySplit { which: "train" });
    }
    if dataset.valid.is_empty() {
        return Err(TrainError::EmptySplit { which: "valid" });
    }
    let train = encode_examples(&model.vocab, &dataset.train);
    let valid = encode_examples(&model.vocab, &dataset.valid);
    model.config.dropout_rate = cfg.dropout_rate;

    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience, true);
    let mut best_state = model.state.clone();
    let mut best_epoch = 0usize;
    let mut epochs_run = 0usize;
    let mut final_train_loss = f64::NAN;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let epoch_s = epoch.to_string();
        order.shuffle(&mut rng_for(cfg.seed, &[tag, "epoch", &epoch_s]));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Vec<usize>, usize)> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let drop_seed = (cfg.dropout_rate > 0.0)
                .then(|| derive_seed(cfg.seed, &[tag, "drop", &epoch_s, &bi.to_string()]));
            let (loss, grads, _) =
                dc_loss_and_grads(&model.config, &model.state, &batch, drop_seed)?;
            epoch_loss += loss;
            n_batches += 1;
            let g = grads.params();
            let mut p = model.state.params_mut();
            adam.step(&mut p, &g);
        }
        final_train_loss = epoch_loss / n_batches as f64;
        let (_, accuracy) = evaluate_dc(&model.config, &model.state, &valid)?;
        match stopper.observe(accuracy) {
            StopDecision::Improved => {
                best_state = model.state.clone();
                best_epoch = epoch;
            }
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }
    model.state = best_state;
    Ok(StepReport {
        best_accuracy: stopper.best(),
        best_epoch,
        epochs_run,
        final_train_loss,
    })
}

/// Two-step classification pre-training. Step 1 runs on the large
/// unlabeled dataset; step 2, when given, continues on the target-corpus
/// dataset. Each step trains with cross-entropy and early-stops on
/// validation accuracy, and the model is left at the best epoch of the
/// last step run.
pub fn pretrain_dc(
    model: &mut DcModel,
    step1: &DcDataset,
    step2: Option<&DcDataset>,
    cfg: &TrainConfig,
) -> Result<PretrainReport, TrainError> {
    cfg.validate()?;
    for ds in std::iter::once(step1).chain(step2) {
        if model.state.arity() != ds.n_classes() {
            return Err(TrainError::ArityMismatch {
                model: model.state.arity(),
                dataset: ds.n_classes(),
            });
        }
    }
    let r1 = train_dc_step(model, step1, cfg, "pretrain.step1")?;
    let r2 = match step2 {
        Some(ds) => {
            let step2_cfg = TrainConfig { batch_size: 2.min(cfg.batch_size), ..cfg.clone() };
            Some(train_dc_step(model, ds, &step2_cfg, "pretrain.step2")?)
        }
        None => None,
    };
    Ok(PretrainReport { step1: r1, step2: r2 })
}

/// One essay prepared for scoring: encoded tokens, paragraph function
/// labels, and the gold score in both scales.
#[derive(Debug, Clone)]
pub struct ScoredEssay {
    pub id: String,
    pub gold_raw: f64,
    pub example: ScoringExample,
}

/// Converts scored essays into training examples: `[CLS] … [EOS]` tokens
/// with paragraph markers, I/B/R/C labels, and the gold score normalized
/// onto [0, 1].
pub fn prepare_scoring_examples(
    corpus: &[Essay],
    vocab: &Vocab,
    markers: &RebuttalMarkers,
    scale: ScoreScale,
) -> Result<Vec<ScoredEssay>, TrainError> {
    corpus
        .iter()
        .map(|essay| {
            let gold_raw = essay
                .gold_score
                .ok_or_else(|| TrainError::MissingGold { essay_id: essay.id.clone() })?;
            let gold = normalize_score(gold_raw, scale)?;
            let (tokens, _) = example_tokens(essay, true);
            let ids = vocab.encode(&tokens);
            let labels = label_paragraphs(essay, markers);
            Ok(ScoredEssay { id: essay.id.clone(), gold_raw, example: (ids, labels, gold) })
        })
        .collect()
}

/// One cross-validation fold: disjoint essay-id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic k-fold splitter. Essays are shuffled once; each fold
/// takes one contiguous chunk as its test set and carves
/// `reserved_valid` validation essays out of the remainder. Every essay
/// appears in exactly one test split.
pub fn kfold_split(
    ids: &[String],
    k: usize,
    reserved_valid: usize,
    seed: u64,
) -> Result<Vec<Fold>, TrainError> {
    if k < 2 {
        return Err(TrainError::InvalidConfig { reason: format!("k = {k} must be at least 2") });
    }
    if ids.len() < k {
        return Err(TrainError::TooFewEssays { needed: k, got: ids.len() });
    }
    let distinct: BTreeSet<&String> = ids.iter().collect();
    if distinct.len() != ids.len() {
        return Err(TrainError::InvalidConfig { reason: "duplicate essay ids".into() });
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng_for(seed, &["kfold"]));
    let n = shuffled.len();
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let lo = i * n / k;
        let hi = (i + 1) * n / k;
        let test: Vec<String> = shuffled[lo..hi].to_vec();
        let mut rest: Vec<String> =
            shuffled[..lo].iter().chain(&shuffled[hi..]).cloned().collect();
        if reserved_valid >= rest.len() {
            return Err(TrainError::InvalidConfig {
                reason: format!(
                    "reserving {reserved_valid} validation essays leaves no training data \
                     (fold {i} has {} non-test essays)",
                    rest.len()
                ),
            });
        }
        rest.shuffle(&mut rng_for(seed, &["kfold", "valid", &i.to_string()]));
        let valid: Vec<String> = rest[..reserved_valid].to_vec();
        let train: Vec<String> = rest[reserved_valid..].to_vec();
        folds.push(Fold { index: i, train, valid, test });
    }
    Ok(folds)
}

/// Scoring-model hyperparameters shared across folds and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSpec {
    pub aux_config: AuxConfig,
    pub d_fuse: usize,
    /// Dropout rates tried per fold; the lowest validation MSE wins.
    pub dropout_grid: Vec<f64>,
    pub scale: ScoreScale,
}

impl Default for ScoringSpec {
    fn default() -> Self {
        ScoringSpec {
            aux_config: AuxConfig::default(),
            d_fuse: 64,
            dropout_grid: vec![0.5, 0.7, 0.9],
            scale: ScoreScale::default(),
        }
    }
}

/// Per-fold cross-validation outcome. Gold/predicted pairs and the MSE
/// are on the original (rescaled) score scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// (essay id, gold, predicted), rescaled.
    pub pairs: Vec<(String, f64, f64)>,
    pub mse: f64,
    pub best_epoch: usize,
    pub chosen_dropout: f64,
    /// Best validation MSE (normalized scale) of the winning grid entry.
    pub valid_mse: f64,
}

fn dropout_tag(d: f64) -> String {
    format!("d{:03}", (d * 100.0).round() as u32)
}

/// Builds the fold's scoring model for one dropout-grid entry. The
/// auxiliary/head initialization depends only on (seed, fold), so every
/// grid entry starts from the same parameters and differs in dropout
/// alone; the sweep calls this too, which is what makes its fraction-1
/// runs bit-identical to the fold runs.
pub fn build_fold_scorer(
    base: &DcModel,
    spec: &ScoringSpec,
    fold_index: usize,
    dropout: f64,
    seed: u64,
) -> Result<ScoringModel, TrainError> {
    let mut enc_config = base.config.clone();
    enc_config.dropout_rate = dropout;
    Ok(ScoringModel::from_encoder(
        enc_config,
        base.vocab.clone(),
        base.state.clone(),
        spec.aux_config.clone(),
        spec.d_fuse,
        derive_seed(seed, &["scorer-init", &fold_index.to_string()]),
    )?)
}

/// Trains one scoring model with early stopping on validation MSE
/// (patience `cfg.patience`), leaving the model at its best epoch.
/// Returns (best validation MSE on the normalized scale, best epoch).
pub fn train_scoring_once(
    model: &mut ScoringModel,
    train: &[ScoringExample],
    valid: &[ScoringExample],
    cfg: &TrainConfig,
    tag: &str,
) -> Result<(f64, usize), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit { which: "train" });
    }
    if valid.is_empty() {
        return Err(TrainError::EmptySplit { which: "valid" });
    }
    let valid_mse = |m: &ScoringModel| -> Result<f64, TrainError> {
        let preds: Vec<f64> = valid
            .iter()
            .map(|(ids, labels, _)| m.score(ids, labels))
            .collect::<Result<_, _>>()?;
        let golds: Vec<f64> = valid.iter().map(|&(_, _, g)| g).collect();
        Ok(scoring_loss(&preds, &golds)?)
    };

    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience, false);
    let mut best: Option<ScoringModel> = None;
    let mut best_epoch = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let dropout_active = model.enc_config.dropout_rate > 0.0;

    for epoch in 0..cfg.max_epochs {
        let epoch_s = epoch.to_string();
        order.shuffle(&mut rng_for(cfg.seed, &[tag, "epoch", &epoch_s]));
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<ScoringExample> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let drop_seed = dropout_active
                .then(|| derive_seed(cfg.seed, &[tag, "drop", &epoch_s, &bi.to_string()]));
            let (_, grads) = score_loss_and_grads(model, &batch, drop_seed)?;
            match cfg.mode {
                TrainMode::Finetune => {
                    let g = grads.params();
                    let mut p = model.params_mut();
                    adam.step(&mut p, &g);
                }
                TrainMode::Fixed => {
                    let g = grads.aux_head_params();
                    let mut p = model.aux_head_params_mut();
                    adam.step(&mut p, &g);
                }
            }
        }
        let mse = valid_mse(model)?;
        match stopper.observe(mse) {
            StopDecision::Improved => {
                best = Some(model.clone());
                best_epoch = epoch;
            }
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }
    *model = best.expect("at least one epoch ran");
    Ok((stopper.best(), best_epoch))
}

fn lookup_examples<'a>(
    by_id: &BTreeMap<&str, &'a ScoredEssay>,
    ids: &[String],
    which: &'static str,
) -> Result<Vec<&'a ScoredEssay>, TrainError> {
    ids.iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| TrainError::InvalidConfig {
                reason: format!("{which} id {id} not present in the scored corpus"),
            })
        })
        .collect()
}

fn check_fold_disjoint(fold: &Fold) -> Result<(), TrainError> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for id in fold.train.iter().chain(&fold.valid).chain(&fold.test) {
        if !seen.insert(id.as_str()) {
            return Err(TrainError::InvalidConfig {
                reason: format!("fold {}: essay {id} appears in more than one split", fold.index),
            });
        }
    }
    Ok(())
}

/// Trains and evaluates one fold: every dropout-grid entry trains from
/// the same initialization, the entry with the lowest validation MSE is
/// kept, and its test predictions are rescaled to the original scale.
pub fn train_scoring_fold(
    base: &DcModel,
    spec: &ScoringSpec,
    scored: &[ScoredEssay],
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<FoldReport, TrainError> {
    check_fold_disjoint(fold)?;
    if spec.dropout_grid.is_empty() {
        return Err(TrainError::InvalidConfig { reason: "dropout grid is empty".into() });
    }
    let by_id: BTreeMap<&str, &ScoredEssay> =
        scored.iter().map(|s| (s.id.as_str(), s)).collect();
    let train = lookup_examples(&by_id, &fold.train, "train")?;
    let valid = lookup_examples(&by_id, &fold.valid, "valid")?;
    let test = lookup_examples(&by_id, &fold.test, "test")?;
    if test.is_empty() {
        return Err(TrainError::EmptySplit { which: "test" });
    }
    let train_ex: Vec<ScoringExample> = train.iter().map(|s| s.example.clone()).collect();
    let valid_ex: Vec<ScoringExample> = valid.iter().map(|s| s.example.clone()).collect();

    let mut winner: Option<(f64, f64, usize, ScoringModel)> = None;
    for &dropout in &spec.dropout_grid {
        let mut model = build_fold_scorer(base, spec, fold.index, dropout, cfg.seed)?;
        let tag = format!("score.fold{}.{}", fold.index, dropout_tag(dropout));
        let (vmse, best_epoch) =
            train_scoring_once(&mut model, &train_ex, &valid_ex, cfg, &tag)?;
        let better = match &winner {
            None => true,
            Some((best_vmse, ..)) => vmse < *best_vmse,
        };
        if better {
            winner = Some((vmse, dropout, best_epoch, model));
        }
    }
    let (valid_mse, chosen_dropout, best_epoch, model) = winner.expect("non-empty grid");

    let mut pairs = Vec::with_capacity(test.len());
    let mut sq_sum = 0.0;
    for s in &test {
        let (ids, labels, _) = &s.example;
        let pred = rescale_score(model.score(ids, labels)?, spec.scale);
        sq_sum += (pred - s.gold_raw) * (pred - s.gold_raw);
        pairs.push((s.id.clone(), s.gold_raw, pred));
    }
    Ok(FoldReport {
        fold_index: fold.index,
        train_ids: fold.train.clone(),
        valid_ids: fold.valid.clone(),
        test_ids: fold.test.clone(),
        pairs,
        mse: sq_sum / test.len() as f64,
        best_epoch,
        chosen_dropout,
        valid_mse,
    })
}

/// Full cross-validation: [`train_scoring_fold`] over every fold.
pub fn train_scoring(
    base: &DcModel,
    spec: &ScoringSpec,
    corpus: &[Essay],
    markers: &RebuttalMarkers,
    folds: &[Fold],
    cfg: &TrainConfig,
) -> Result<Vec<FoldReport>, TrainError> {
    cfg.validate()?;
    let scored = prepare_scoring_examples(corpus, &base.vocab, markers, spec.scale)?;
    folds
        .iter()
        .map(|fold| train_scoring_fold(base, spec, &scored, fold, cfg))
        .collect()
}

/// Mean test MSE over folds.
pub fn mean_mse(reports: &[FoldReport]) -> f64 {
    reports.iter().map(|r| r.mse).sum::<f64>() / reports.len() as f64
}

/// Writes one JSON file per fold plus `summary.csv` with per-fold and
/// mean MSE.
pub fn write_fold_reports(dir: &Path, reports: &[FoldReport]) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    for r in reports {
        let path = dir.join(format!("fold{}.json", r.fold_index));
        fs::write(path, serde_json::to_string_pretty(r)?)?;
    }
    let mut csv = String::from("fold,mse,valid_mse,chosen_dropout,best_epoch\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.fold_index, r.mse, r.valid_mse, r.chosen_dropout, r.best_epoch
        ));
    }
    csv.push_str(&format!("mean,{},,,\n", mean_mse(reports)));
    fs::write(dir.join("summary.csv"), csv)?;
    Ok(())
}

/// The training-set reductions measured by the low-resource sweep.
pub const SWEEP_FRACTIONS: [(u32, u32); 4] = [(1, 1), (1, 2), (1, 4), (1, 8)];

/// One sweep measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction_num: u32,
    pub fraction_den: u32,
    pub n_train: usize,
    pub variant: String,
    /// Test MSE on the original scale.
    pub mse: f64,
}

/// A model variant measured by the sweep.
pub struct SweepVariant<'a> {
    pub name: String,
    pub base: &'a DcModel,
    /// Dropout to train with (typically the fold's chosen grid entry).
    pub dropout: f64,
}

/// Deterministic training subsample: `ceil(|train| · num/den)` essays,
/// chosen by a seeded shuffle and then restored to the original order so
/// the full fraction is the identity.
fn subsample_train(train: &[String], num: u32, den: u32, seed: u64) -> Vec<String> {
    let n = train.len();
    let keep = (n * num as usize).div_ceil(den as usize);
    if keep >= n {
        return train.to_vec();
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_for(seed, &["sweep", "subsample", &format!("{num}of{den}")]));
    let mut chosen: Vec<usize> = indices.into_iter().take(keep).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| train[i].clone()).collect()
}

/// Trains every variant at every fraction of the fold's training set and
/// reports test MSE. At fraction 1 the run is bit-identical to
/// [`train_scoring_fold`]'s run for the same dropout: same subsample
/// (the identity), same initialization, same epoch seeds.
pub fn low_resource_sweep(
    variants: &[SweepVariant],
    spec: &ScoringSpec,
    corpus: &[Essay],
    markers: &RebuttalMarkers,
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, TrainError> {
    cfg.validate()?;
    check_fold_disjoint(fold)?;
    let mut rows = Vec::new();
    for variant in variants {
        let scored =
            prepare_scoring_examples(corpus, &variant.base.vocab, markers, spec.scale)?;
        let by_id: BTreeMap<&str, &ScoredEssay> =
            scored.iter().map(|s| (s.id.as_str(), s)).collect();
        let valid = lookup_examples(&by_id, &fold.valid, "valid")?;
        let test = lookup_examples(&by_id, &fold.test, "test")?;
        let valid_ex: Vec<ScoringExample> = valid.iter().map(|s| s.example.clone()).collect();
        for &(num, den) in &SWEEP_FRACTIONS {
            let train_ids = subsample_train(&fold.train, num, den, cfg.seed);
            if train_ids.is_empty() {
                return Err(TrainError::EmptySplit { which: "train" });
            }
            let train = lookup_examples(&by_id, &train_ids, "train")?;
            let train_ex: Vec<ScoringExample> =
                train.iter().map(|s| s.example.clone()).collect();
            let mut model =
                build_fold_scorer(variant.base, spec, fold.index, variant.dropout, cfg.seed)?;
            let tag = if (num, den) == (1, 1) {
                format!("score.fold{}.{}", fold.index, dropout_tag(variant.dropout))
            } else {
                format!(
                    "sweep.f{num}of{den}.fold{}.{}",
                    fold.index,
                    dropout_tag(variant.dropout)
                )
            };
            train_scoring_once(&mut model, &train_ex, &valid_ex, cfg, &tag)?;
            let mut sq_sum = 0.0;
            for s in &test {
                let (ids, labels, _) = &s.example;
                let pred = rescale_score(model.score(ids, labels)?, spec.scale);
                sq_sum += (pred - s.gold_raw) * (pred - s.gold_raw);
            }
            rows.push(SweepRow {
                fraction_num: num,
                fraction_den: den,
                n_train: train_ids.len(),
                variant: variant.name.clone(),
                mse: sq_sum / test.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// `fraction,n_train,variant,mse` — one row per (fraction, variant).
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), TrainError> {
    let mut csv = String::from("fraction,n_train,variant,mse\n");
    for r in rows {
        csv.push_str(&format!(
            "{}/{},{},{},{}\n",
            r.fraction_num, r.fraction_den, r.n_train, r.variant, r.mse
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}

/// Wilcoxon signed-rank outcome. `statistic` is the signed rank sum
/// `W⁺ − W⁻`; `p_value` is two-sided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_nonzero: usize,
    /// Whether the exact-enumeration branch produced the p-value.
    pub exact: bool,
}

fn average_ranks(sorted_abs: &[f64]) -> Vec<f64> {
    // Input is |d| ascending; ties share the mean of their positions.
    let n = sorted_abs.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted_abs[j + 1] == sorted_abs[i] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg;
        }
        i = j + 1;
    }
    ranks
}

fn exact_two_sided_p(ranks: &[f64], w_min: f64) -> f64 {
    // All 2^n sign assignments are equally likely under H0; count the
    // assignments whose positive-rank sum is at most w_min.
    let n = ranks.len();
    let total = 1u64 << n;
    let mut count = 0u64;
    for mask in 0..total {
        let mut w = 0.0;
        for (i, r) in ranks.iter().enumerate() {
            if mask >> i & 1 == 1 {
                w += r;
            }
        }
        if w <= w_min + 1e-9 {
            count += 1;
        }
    }
    (2.0 * count as f64 / total as f64).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired values (typically
/// per-essay squared errors of two models). Zero differences are
/// dropped; ties get average ranks. `n ≤ 12` uses exact enumeration over
/// all sign assignments; larger samples use the normal approximation
/// with the tie-corrected variance.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, TrainError> {
    if a.len() != b.len() {
        return Err(TrainError::PairLengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 6 {
        return Err(TrainError::TooFewPairs { needed: 6, got: a.len() });
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            w_minus: 0.0,
            statistic: 0.0,
            p_value: 1.0,
            n_nonzero: 0,
            exact: true,
        });
    }
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let sorted_abs: Vec<f64> = order.iter().map(|&i| diffs[i].abs()).collect();
    let ranks_sorted = average_ranks(&sorted_abs);
    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        if diffs[i] > 0.0 {
            w_plus += ranks_sorted[pos];
        } else {
            w_minus += ranks_sorted[pos];
        }
    }
    let w_min = w_plus.min(w_minus);
    let (p_value, exact) = if n <= 12 {
        (exact_two_sided_p(&ranks_sorted, w_min), true)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        // Tie correction: Σ(t³ − t)/48 over tie groups of size t.
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted_abs[j + 1] == sorted_abs[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += (t * t * t - t) / 48.0;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = (w_plus - mu) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0), false)
    };
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        statistic: w_plus - w_minus,
        p_value,
        n_nonzero: n,
        exact,
    })
}

/// First `k` principal components of the rows of `data` by power
/// iteration with deflation (tolerance 1e-8, at most 10 000 iterations
/// per component, deterministic start). Returns (components, per-row
/// scores, explained variance per component). Components are
/// sign-normalized: the entry with the largest magnitude is positive.
pub fn principal_components(
    data: &[Vec<f64>],
    k: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    // Center columns.
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered: Vec<Vec<f64>> =
        data.iter().map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let original_centered = centered.clone();

    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        // Deterministic start with a mild tilt so symmetric inputs cannot
        // leave it orthogonal to the leading eigenvector.
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 1e-3 * j as f64).collect();
        normalize(&mut v);
        let mut converged = false;
        for _ in 0..10_000 {
            let mut next = vec![0.0; d];
            for row in &centered {
                let proj: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (nx, r) in next.iter_mut().zip(row) {
                    *nx += proj * r;
                }
            }
            let norm = normalize(&mut next);
            if norm == 0.0 {
                // Nothing left after deflation: a zero component.
                next = vec![0.0; d];
                v = next;
                converged = true;
                break;
            }
            let delta =
                v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-8 {
                converged = true;
                break;
            }
        }
        let _ = converged;
        // Sign convention.
        if let Some((_, &extreme)) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, x)| (i, x))
        {
            if extreme < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        // Explained variance = mean squared projection.
        let var = centered
            .iter()
            .map(|row| {
                let p: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                p * p
            })
            .sum::<f64>()
            / n as f64;
        // Deflate.
        for row in centered.iter_mut() {
            let proj: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (r, c) in row.iter_mut().zip(&v) {
                *r -= proj * c;
            }
        }
        components.push(v);
        variances.push(var);
    }
    let scores: Vec<Vec<f64>> = original_centered
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|c| row.iter().zip(c).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    (components, scores, variances)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Writes one CSV row per essay: id, gold score (empty when unscored),
/// every document-embedding component, and the first two principal
/// components. Returns the number of essay rows written.
pub fn export_embeddings(
    model: &DcModel,
    corpus: &[Essay],
    path: &Path,
) -> Result<usize, TrainError> {
    if corpus.len() < 2 {
        return Err(TrainError::TooFewEssays { needed: 2, got: corpus.len() });
    }
    let mut embeddings = Vec::with_capacity(corpus.len());
    for essay in corpus {
        let (tokens, _) = example_tokens(essay, true);
        let ids = model.vocab.encode(&tokens);
        let cache = encode_and_pool(&model.config, &model.state, &ids, None)?;
        embeddings.push(cache.pooled);
    }
    let (_, scores, _) = principal_components(&embeddings, 2);

    let d = model.config.d_model;
    let mut out = String::from("essay_id,gold_score");
    for j in 0..d {
        out.push_str(&format!(",e{j}"));
    }
    out.push_str(",pc1,pc2\n");
    for (i, essay) in corpus.iter().enumerate() {
        out.push_str(&csv_field(&essay.id));
        out.push(',');
        if let Some(g) = essay.gold_score {
            out.push_str(&g.to_string());
        }
        for v in &embeddings[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", scores[i][0], scores[i][1]));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(corpus.len())
}
