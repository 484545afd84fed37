//! Versioned JSON weights container.
//!
//! One file holds a format version, a model kind tag, and the complete
//! model: config header, vocabulary, and every named tensor. The two
//! model kinds are the classification pre-training model
//! (`dc_classifier`) and the fused scoring model (`scorer`, whose
//! encoder/auxiliary/head parameters live under distinct `enc`/`aux`/
//! `head` namespaces). JSON floats are written in shortest-roundtrip
//! form, so save → load reproduces every `f64` bit-exactly.
//!
//! Field names are part of the on-disk format and documented in the
//! repository README; bump [`FORMAT_VERSION`] on any breaking change.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::DcModel;
use crate::fusion::ScoringModel;
use crate::nn::Mat;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("failed to read/write weights file: {0}")]
    Io(#[from] io::Error),
    #[error("weights file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported weights format version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weights file holds a {found} model, expected {expected}")]
    Kind { found: &'static str, expected: &'static str },
    #[error("malformed weights: {reason}")]
    Shape { reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Payload {
    DcClassifier { model: DcModel },
    Scorer { model: ScoringModel },
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::DcClassifier { .. } => "dc_classifier",
            Payload::Scorer { .. } => "scorer",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    format_version: u32,
    #[serde(flatten)]
    payload: Payload,
}

fn check_mat(name: &str, mat: &Mat, rows: usize, cols: usize) -> Result<(), WeightsError> {
    if mat.rows != rows || mat.cols != cols || mat.data.len() != rows * cols {
        return Err(WeightsError::Shape {
            reason: format!(
                "{name}: expected {rows}x{cols} with {} values, found {}x{} with {}",
                rows * cols,
                mat.rows,
                mat.cols,
                mat.data.len()
            ),
        });
    }
    if let Some(bad) = mat.data.iter().find(|v| !v.is_finite()) {
        return Err(WeightsError::Shape { reason: format!("{name}: non-finite value {bad}") });
    }
    Ok(())
}

fn check_vec(name: &str, v: &[f64], len: usize) -> Result<(), WeightsError> {
    if v.len() != len {
        return Err(WeightsError::Shape {
            reason: format!("{name}: expected length {len}, found {}", v.len()),
        });
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(WeightsError::Shape { reason: format!("{name}: non-finite value {bad}") });
    }
    Ok(())
}

fn validate_dc(model: &DcModel) -> Result<(), WeightsError> {
    let cfg = &model.config;
    cfg.validate().map_err(|e| WeightsError::Shape { reason: e.to_string() })?;
    if model.vocab.len() != cfg.vocab_size {
        return Err(WeightsError::Shape {
            reason: format!(
                "vocabulary size {} does not match config vocab_size {}",
                model.vocab.len(),
                cfg.vocab_size
            ),
        });
    }
    let st = &model.state;
    check_mat("tok_emb", &st.tok_emb, cfg.vocab_size, cfg.d_model)?;
    check_mat("pos_emb", &st.pos_emb, cfg.max_len, cfg.d_model)?;
    if st.layers.len() != cfg.n_layers {
        return Err(WeightsError::Shape {
            reason: format!("expected {} layers, found {}", cfg.n_layers, st.layers.len()),
        });
    }
    for (i, l) in st.layers.iter().enumerate() {
        let d = cfg.d_model;
        check_vec(&format!("layer{i}.ln1_gamma"), &l.ln1_gamma, d)?;
        check_vec(&format!("layer{i}.ln1_beta"), &l.ln1_beta, d)?;
        check_mat(&format!("layer{i}.wq"), &l.wq, d, d)?;
        check_vec(&format!("layer{i}.bq"), &l.bq, d)?;
        check_mat(&format!("layer{i}.wk"), &l.wk, d, d)?;
        check_vec(&format!("layer{i}.bk"), &l.bk, d)?;
        check_mat(&format!("layer{i}.wv"), &l.wv, d, d)?;
        check_vec(&format!("layer{i}.bv"), &l.bv, d)?;
        check_mat(&format!("layer{i}.wo"), &l.wo, d, d)?;
        check_vec(&format!("layer{i}.bo"), &l.bo, d)?;
        check_vec(&format!("layer{i}.ln2_gamma"), &l.ln2_gamma, d)?;
        check_vec(&format!("layer{i}.ln2_beta"), &l.ln2_beta, d)?;
        check_mat(&format!("layer{i}.w1"), &l.w1, cfg.d_ff, d)?;
        check_vec(&format!("layer{i}.b1"), &l.b1, cfg.d_ff)?;
        check_mat(&format!("layer{i}.w2"), &l.w2, d, cfg.d_ff)?;
        check_vec(&format!("layer{i}.b2"), &l.b2, d)?;
    }
    if st.head_w.rows < 2 {
        return Err(WeightsError::Shape {
            reason: format!("classification head arity {} is below 2", st.head_w.rows),
        });
    }
    check_mat("head_w", &st.head_w, st.head_w.rows, cfg.d_model)?;
    check_vec("head_b", &st.head_b, st.head_w.rows)?;
    Ok(())
}

fn validate_scorer(model: &ScoringModel) -> Result<(), WeightsError> {
    // The encoder half reuses the classifier checks via a shim model.
    validate_dc(&DcModel {
        config: model.enc_config.clone(),
        vocab: model.vocab.clone(),
        state: model.enc.clone(),
    })?;
    let aux = &model.aux_config;
    aux.validate().map_err(|e| WeightsError::Shape { reason: e.to_string() })?;
    let d_dir = aux.d_aux / 2;
    check_mat("aux.label_emb", &model.aux.label_emb, crate::fusion::N_LABELS, aux.d_para)?;
    for (name, dir) in [("aux.fwd", &model.aux.fwd), ("aux.bwd", &model.aux.bwd)] {
        check_mat(&format!("{name}.w"), &dir.w, 4 * d_dir, aux.d_para)?;
        check_mat(&format!("{name}.u"), &dir.u, 4 * d_dir, d_dir)?;
        check_vec(&format!("{name}.b"), &dir.b, 4 * d_dir)?;
    }
    let hc = &model.head_config;
    hc.validate().map_err(|e| WeightsError::Shape { reason: e.to_string() })?;
    if hc.d_base != model.enc_config.d_model || hc.d_aux != aux.d_aux {
        return Err(WeightsError::Shape {
            reason: format!(
                "head expects [{} + {}] input but encoder/aux provide [{} + {}]",
                hc.d_base, hc.d_aux, model.enc_config.d_model, aux.d_aux
            ),
        });
    }
    check_mat("head.w_fuse", &model.head.w_fuse, hc.d_fuse, hc.d_base + hc.d_aux)?;
    check_vec("head.w_score", &model.head.w_score, hc.d_fuse)?;
    check_vec("head.b_score", &model.head.b_score, 1)?;
    Ok(())
}

fn save(path: &Path, payload: Payload) -> Result<(), WeightsError> {
    let file = WeightsFile { format_version: FORMAT_VERSION, payload };
    let json = serde_json::to_string(&file)?;
    fs::write(path, json)?;
    Ok(())
}

fn load(path: &Path) -> Result<Payload, WeightsError> {
    let json = fs::read_to_string(path)?;
    let file: WeightsFile = serde_json::from_str(&json)?;
    if file.format_version != FORMAT_VERSION {
        return Err(WeightsError::Version {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(file.payload)
}

pub fn save_dc_model(path: &Path, model: &DcModel) -> Result<(), WeightsError> {
    validate_dc(model)?;
    save(path, Payload::DcClassifier { model: model.clone() })
}

pub fn load_dc_model(path: &Path) -> Result<DcModel, WeightsError> {
    match load(path)? {
        Payload::DcClassifier { model } => {
            validate_dc(&model)?;
            Ok(model)
        }
        other => Err(WeightsError::Kind { found: other.kind(), expected: "dc_classifier" }),
    }
}

pub fn save_scorer(path: &Path, model: &ScoringModel) -> Result<(), WeightsError> {
    validate_scorer(model)?;
    save(path, Payload::Scorer { model: model.clone() })
}

pub fn load_scorer(path: &Path) -> Result<ScoringModel, WeightsError> {
    match load(path)? {
        Payload::Scorer { model } => {
            validate_scorer(&model)?;
            Ok(model)
        }
        other => Err(WeightsError::Kind { found: other.kind(), expected: "scorer" }),
    }
}
