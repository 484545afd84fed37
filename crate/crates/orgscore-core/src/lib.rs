//! Corruption-based self-supervised pre-training and organization scoring
//! for essays.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] — ingest essays (JSONL or plain-text directories) into an
//!    immutable paragraph/sentence/token document model, and map gold
//!    organization scores to and from the unit interval.
//! 2. [`text_analysis`] — sentence splitting, tokenization, discourse-indicator
//!    lexicon matching, and paragraph function labeling (I/B/R/C).
//! 3. [`corruption`] — nine strategies that systematically break an essay's
//!    sentence order, discourse indicators, or paragraph structure.
//! 4. [`dataset`] — N-way original-vs-corrupted classification datasets,
//!    class-collapse transforms, and a synthetic essay generator for
//!    desk-scale experiments.
//! 5. [`encoder`] — a small long-document encoder (sliding-window attention
//!    plus a global `[CLS]` token) with hand-written, finite-difference-checked
//!    gradients and a classification head.
//! 6. [`fusion`] — the auxiliary paragraph-label encoder (embedding + BiLSTM)
//!    and the fusion/scoring head producing a score in (0, 1).
//! 7. [`train_eval`] — classification pre-training, scoring fine-tuning with
//!    k-fold cross-validation and early stopping, low-resource sweeps,
//!    Wilcoxon significance tests, and embedding export.
//!
//! Everything is deterministic given a seed: shuffles use a seedable PRNG,
//! per-essay work derives independent seeds, and batch gradients reduce in a
//! fixed order, so results do not depend on worker-thread count.

pub mod corpus;
pub mod corruption;
pub mod dataset;
pub mod encoder;
pub mod fusion;
pub mod gradcheck;
pub mod nn;
pub mod seeding;
pub mod text_analysis;
pub mod train_eval;
pub mod weights;

pub use corpus::{Essay, Paragraph, ParagraphLabel, ScoreScale, Sentence};
pub use corruption::{CorruptionContext, CorruptionError, CorruptionLabel};
pub use dataset::{ClassificationScheme, DcDataset, DcExample, LabelCollapse};
pub use encoder::{DcModel, EncoderConfig, EncoderState, Vocab};
pub use fusion::{AuxConfig, AuxState, HeadConfig, HeadState, ScoringModel};
pub use text_analysis::{DiLexicon, DiOccurrence};
pub use train_eval::{FoldReport, SweepRow, TrainConfig, TrainMode};
