//! Command-line surface. Most values are optional at the parser level so a
//! `key = value` config file can supply defaults; resolution order is
//! flag > config file > environment (seed only) > built-in default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Essay-organization scoring toolkit: corruption-based pre-training,
/// fused encoder + paragraph-label scoring, and a reproducible
/// evaluation harness.
#[derive(Parser, Debug)]
#[command(name = "orgscore", version, about, propagate_version = true)]
pub struct Cli {
    /// Line-oriented `key = value` defaults file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for corruption and dataset jobs. Outputs are
    /// byte-identical for every value; 1 is the reference serial order.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read a corpus (JSONL or a directory of plain-text essays) and write
    /// normalized corpus JSONL.
    Ingest(IngestArgs),
    /// Generate a synthetic essay corpus.
    Synth(SynthArgs),
    /// Apply one corruption strategy to every essay of a corpus.
    Corrupt(CorruptArgs),
    /// Build an original-vs-corrupted classification dataset.
    BuildDataset(BuildDatasetArgs),
    /// Re-label a 5-way dataset onto a coarser class set.
    Collapse(CollapseArgs),
    /// Pre-train the document encoder on corruption classification.
    Pretrain(PretrainArgs),
    /// Train and cross-validate the fused organization scorer.
    Finetune(FinetuneArgs),
    /// Summarize fold reports; compare two runs with a signed-rank test.
    Eval(EvalArgs),
    /// Low-resource sweep: shrink the training split stepwise and compare
    /// a pre-trained variant against a baseline.
    Sweep(SweepArgs),
    /// Export document embeddings and their first two principal components
    /// to CSV.
    ExportEmbeddings(ExportEmbeddingsArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Input corpus: a JSONL file or a directory of plain-text essays.
    #[arg(short, long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output corpus JSONL path.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
    /// Input format [possible values: jsonl, plain-dir]; inferred from the
    /// path when omitted (directory => plain-dir).
    #[arg(long, value_name = "FORMAT")]
    pub format: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of essays to generate [default: 200].
    #[arg(long, value_name = "N")]
    pub essays: Option<usize>,
    /// Number of distinct prompts [default: 4].
    #[arg(long, value_name = "N")]
    pub prompts: Option<usize>,
    /// Minimum paragraphs per essay [default: 3].
    #[arg(long, value_name = "N")]
    pub paragraphs_min: Option<usize>,
    /// Maximum paragraphs per essay [default: 6].
    #[arg(long, value_name = "N")]
    pub paragraphs_max: Option<usize>,
    /// Degrade every essay by the same amount in [0,1] and record gold
    /// scores. Mutually exclusive with --quality-levels.
    #[arg(long, value_name = "Q", conflicts_with = "quality_levels")]
    pub quality_fixed: Option<f64>,
    /// Cycle degradation levels across essays, e.g. "0,0.25,0.5,0.75,1",
    /// and record gold scores.
    #[arg(long, value_name = "LEVELS")]
    pub quality_levels: Option<String>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Output corpus JSONL path.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    /// Input corpus JSONL.
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output corpus JSONL (corrupted essays, with the strategy recorded
    /// per line).
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
    /// Corruption strategy: c-sent, m-sent, c-di, m-di, c-para, m-para,
    /// para-drop, para-rs, para-rd.
    #[arg(long, value_name = "NAME")]
    pub strategy: Option<String>,
    /// Indicator-phrase lexicon file (one phrase per line) [default:
    /// bundled lexicon].
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BuildDatasetArgs {
    /// Input corpus JSONL.
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output dataset directory (train.jsonl, valid.jsonl, manifest.json).
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,
    /// Classification scheme: binary-csent, binary-msent, binary-cdi,
    /// binary-mdi, binary-cpara, 3way, 4way, 5way, 6way [default: 5way].
    #[arg(long, value_name = "NAME")]
    pub scheme: Option<String>,
    /// Indicator-phrase lexicon file [default: bundled lexicon].
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CollapseArgs {
    /// Input dataset directory (built with the 5way scheme).
    #[arg(short, long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output dataset directory.
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,
    /// Label collapse: 5way-to-binary or 5way-to-3way.
    #[arg(long, value_name = "NAME")]
    pub to: Option<String>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Step-1 dataset directory (from build-dataset).
    #[arg(short, long, value_name = "DIR")]
    pub input: PathBuf,
    /// Optional step-2 dataset directory; trained after step 1 with batch
    /// size clamped to 2. Must have the same number of classes.
    #[arg(long, value_name = "DIR")]
    pub step2_data: Option<PathBuf>,
    /// Output directory (weights.json, report.json).
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,
    /// Save the randomly initialized model without training (for
    /// no-pretraining baselines).
    #[arg(long)]
    pub init_only: bool,

    /// Embedding width [default: 16].
    #[arg(long, value_name = "D")]
    pub d_model: Option<usize>,
    /// Feed-forward inner width [default: 2 * d_model].
    #[arg(long, value_name = "D")]
    pub d_ff: Option<usize>,
    /// Transformer layers [default: 2].
    #[arg(long, value_name = "N")]
    pub layers: Option<usize>,
    /// Attention window width (a token sees window/2 neighbors per side)
    /// [default: 8].
    #[arg(long, value_name = "W")]
    pub window: Option<usize>,
    /// Attention heads [default: 2].
    #[arg(long, value_name = "N")]
    pub heads: Option<usize>,
    /// Layer whose hidden states are pooled [default: last layer].
    #[arg(long, value_name = "L")]
    pub tap_layer: Option<usize>,
    /// Maximum sequence length [default: longest example + 8].
    #[arg(long, value_name = "N")]
    pub max_len: Option<usize>,

    /// Learning rate [default: 1e-5].
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    /// Batch size [default: 4].
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 100].
    #[arg(long, value_name = "N")]
    pub max_epochs: Option<usize>,
    /// Consecutive non-improving epochs before stopping [default: 5].
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// Dropout rate during training [default: 0.1].
    #[arg(long, value_name = "P")]
    pub dropout: Option<f64>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Scored corpus JSONL (every essay needs a gold score).
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,
    /// Encoder weights from `pretrain` (use `pretrain --init-only` for a
    /// no-pretraining baseline).
    #[arg(short, long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Output directory (fold<k>.json per fold + summary.csv).
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,

    /// Number of cross-validation folds [default: 5].
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,
    /// Essays reserved for early-stopping validation per fold [default:
    /// a tenth of the corpus].
    #[arg(long, value_name = "N")]
    pub reserved_valid: Option<usize>,
    /// Keep the encoder frozen and train only the scoring layers.
    #[arg(long)]
    pub fixed_encoder: bool,

    /// Paragraph-label embedding width [default: 16].
    #[arg(long, value_name = "D")]
    pub d_para: Option<usize>,
    /// Label-sequence encoder output width [default: 200].
    #[arg(long, value_name = "D")]
    pub d_aux: Option<usize>,
    /// Fusion layer width [default: 64].
    #[arg(long, value_name = "D")]
    pub d_fuse: Option<usize>,
    /// Comma-separated dropout grid searched per fold [default:
    /// "0.5,0.7,0.9"].
    #[arg(long, value_name = "GRID")]
    pub dropout_grid: Option<String>,
    /// Lowest raw gold score [default: 1].
    #[arg(long, value_name = "S")]
    pub score_min: Option<f64>,
    /// Highest raw gold score [default: 4].
    #[arg(long, value_name = "S")]
    pub score_max: Option<f64>,

    /// Learning rate [default: 1e-5; 1e-3 with --fixed-encoder].
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    /// Batch size [default: 2].
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 100].
    #[arg(long, value_name = "N")]
    pub max_epochs: Option<usize>,
    /// Consecutive non-improving epochs before stopping [default: 12].
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Fold-report directory (from `finetune`).
    #[arg(short = 'a', long, value_name = "DIR")]
    pub reports_a: PathBuf,
    /// Second fold-report directory; when given, per-essay squared errors
    /// are paired by essay id and compared with the signed-rank test.
    #[arg(short = 'b', long, value_name = "DIR")]
    pub reports_b: Option<PathBuf>,
    /// Output JSON file.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Scored corpus JSONL.
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,
    /// Pre-trained encoder weights.
    #[arg(short, long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Baseline encoder weights (typically from `pretrain --init-only`).
    #[arg(long, value_name = "FILE")]
    pub baseline_weights: PathBuf,
    /// Output directory (sweep.csv).
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,

    /// Fold index the sweep runs on [default: 0].
    #[arg(long, value_name = "K")]
    pub fold: Option<usize>,
    /// Number of cross-validation folds [default: 5].
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,
    /// Essays reserved for early-stopping validation per fold [default:
    /// a tenth of the corpus].
    #[arg(long, value_name = "N")]
    pub reserved_valid: Option<usize>,
    /// Keep the encoder frozen and train only the scoring layers.
    #[arg(long)]
    pub fixed_encoder: bool,
    /// Dropout used for both sweep variants [default: first grid entry].
    #[arg(long, value_name = "P")]
    pub variant_dropout: Option<f64>,

    /// Paragraph-label embedding width [default: 16].
    #[arg(long, value_name = "D")]
    pub d_para: Option<usize>,
    /// Label-sequence encoder output width [default: 200].
    #[arg(long, value_name = "D")]
    pub d_aux: Option<usize>,
    /// Fusion layer width [default: 64].
    #[arg(long, value_name = "D")]
    pub d_fuse: Option<usize>,
    /// Comma-separated dropout grid [default: "0.5,0.7,0.9"].
    #[arg(long, value_name = "GRID")]
    pub dropout_grid: Option<String>,
    /// Lowest raw gold score [default: 1].
    #[arg(long, value_name = "S")]
    pub score_min: Option<f64>,
    /// Highest raw gold score [default: 4].
    #[arg(long, value_name = "S")]
    pub score_max: Option<f64>,

    /// Learning rate [default: 1e-5; 1e-3 with --fixed-encoder].
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    /// Batch size [default: 2].
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 100].
    #[arg(long, value_name = "N")]
    pub max_epochs: Option<usize>,
    /// Consecutive non-improving epochs before stopping [default: 12].
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// RNG seed [default: ORGSCORE_SEED or 0].
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ExportEmbeddingsArgs {
    /// Corpus JSONL to embed.
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,
    /// Encoder weights.
    #[arg(short, long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Output CSV file.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Model size to check [possible values: toy].
    #[arg(long, value_name = "SIZE")]
    pub dims: Option<String>,
    /// Finite-difference step [default: 1e-4].
    #[arg(long, value_name = "EPS")]
    pub epsilon: Option<f64>,
    /// Optional JSON report path (a manifest is written next to it).
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}
