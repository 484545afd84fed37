//! Subcommand implementations: resolve settings, run the library pipeline,
//! write outputs, and drop a manifest next to them.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use orgscore_core::corpus::{ingest_corpus, write_corpus_jsonl, CorpusFormat, Essay, ScoreScale};
use orgscore_core::corruption::{corrupt_corpus, CorruptionLabel};
use orgscore_core::dataset::{
    build_dc_dataset, collapse_labels, read_dataset, write_dataset, ClassificationScheme,
    DatasetManifest, DcDataset, LabelCollapse, QualityKnob, SynthConfig,
    generate_synthetic_corpus,
};
use orgscore_core::encoder::{DcModel, EncoderConfig, EncoderState, PoolMode, Vocab};
use orgscore_core::fusion::{AuxConfig, ScoringModel};
use orgscore_core::gradcheck::{check_dc_gradients, check_scoring_gradients};
use orgscore_core::text_analysis::{DiLexicon, RebuttalMarkers};
use orgscore_core::train_eval::{
    export_embeddings, kfold_split, low_resource_sweep, mean_mse, pretrain_dc, train_scoring,
    wilcoxon_signed_rank, write_fold_reports, write_sweep_csv, FoldReport, ScoringSpec,
    SweepVariant, TrainConfig, TrainMode,
};
use orgscore_core::weights::{load_dc_model, save_dc_model};

use crate::args::{self, Cli, Command};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{pick, resolve_seed, Settings};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let settings = Settings::load(cli.config.as_deref())?;
    let jobs = pick(cli.jobs, settings.get("jobs")?, 1usize);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    // First builder wins; tests driving several runs in-process share it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();

    let ctx = Ctx { settings, jobs, started };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &ctx),
        Command::Synth(a) => cmd_synth(a, &ctx),
        Command::Corrupt(a) => cmd_corrupt(a, &ctx),
        Command::BuildDataset(a) => cmd_build_dataset(a, &ctx),
        Command::Collapse(a) => cmd_collapse(a, &ctx),
        Command::Pretrain(a) => cmd_pretrain(a, &ctx),
        Command::Finetune(a) => cmd_finetune(a, &ctx),
        Command::Eval(a) => cmd_eval(a, &ctx),
        Command::Sweep(a) => cmd_sweep(a, &ctx),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(a, &ctx),
        Command::Gradcheck(a) => cmd_gradcheck(a, &ctx),
    }
}

struct Ctx {
    settings: Settings,
    jobs: usize,
    started: Instant,
}

impl Ctx {
    fn manifest(&self, subcommand: &str, seed: Option<u64>) -> RunManifest {
        RunManifest::new(subcommand, seed, self.jobs)
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn load_corpus_jsonl(path: &Path) -> Result<Vec<Essay>, CliError> {
    Ok(ingest_corpus(path, CorpusFormat::Jsonl)?)
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::usage(format!("{what}: expected comma-separated numbers, got `{text}`"))),
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<DiLexicon, CliError> {
    match path {
        None => Ok(DiLexicon::bundled()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("lexicon {}: {e}", p.display())))?;
            DiLexicon::from_lines(text.lines())
                .map_err(|e| CliError::data(format!("lexicon {}: {e}", p.display())))
        }
    }
}

/// Vocabulary plus longest example over one or more datasets.
fn vocab_over_datasets(datasets: &[&DcDataset]) -> (Vocab, usize) {
    let mut tokens: Vec<&str> = Vec::new();
    let mut max_tokens = 0;
    for ds in datasets {
        for e in ds.train.iter().chain(&ds.valid) {
            max_tokens = max_tokens.max(e.tokens.len());
            tokens.extend(e.tokens.iter().map(String::as_str));
        }
    }
    (Vocab::build(tokens), max_tokens)
}

fn resolve_mode(fixed_flag: bool, settings: &Settings) -> Result<TrainMode, CliError> {
    if fixed_flag {
        return Ok(TrainMode::Fixed);
    }
    match settings.raw("mode") {
        None | Some("finetune") => Ok(TrainMode::Finetune),
        Some("fixed") => Ok(TrainMode::Fixed),
        Some(other) => Err(CliError::usage(format!(
            "config key `mode`: expected finetune or fixed, got `{other}`"
        ))),
    }
}

struct ScoringSetup {
    corpus: Vec<Essay>,
    folds: Vec<orgscore_core::train_eval::Fold>,
    spec: ScoringSpec,
    train_cfg: TrainConfig,
    markers: RebuttalMarkers,
    config_json: serde_json::Value,
}

/// Everything `finetune` and `sweep` share: corpus, folds, scoring spec,
/// and the training configuration, resolved from flags and config file.
#[allow(clippy::too_many_arguments)]
fn scoring_setup(
    ctx: &Ctx,
    input: &Path,
    folds: Option<usize>,
    reserved_valid: Option<usize>,
    fixed_encoder: bool,
    d_para: Option<usize>,
    d_aux: Option<usize>,
    d_fuse: Option<usize>,
    dropout_grid: Option<&str>,
    score_min: Option<f64>,
    score_max: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: u64,
) -> Result<ScoringSetup, CliError> {
    let s = &ctx.settings;
    let corpus = load_corpus_jsonl(input)?;
    let k = pick(folds, s.get("folds")?, 5usize);
    let reserved = match reserved_valid.or(s.get("reserved-valid")?) {
        Some(r) => r,
        None => (corpus.len() / 10).max(1),
    };
    let ids: Vec<String> = corpus.iter().map(|e| e.id.clone()).collect();
    let folds = kfold_split(&ids, k, reserved, seed)?;

    let aux_defaults = AuxConfig::default();
    let aux_config = AuxConfig {
        d_para: pick(d_para, s.get("d-para")?, aux_defaults.d_para),
        d_aux: pick(d_aux, s.get("d-aux")?, aux_defaults.d_aux),
    };
    let grid_text = dropout_grid
        .map(str::to_owned)
        .or_else(|| s.raw("dropout-grid").map(str::to_owned))
        .unwrap_or_else(|| "0.5,0.7,0.9".to_owned());
    let dropout_grid = parse_float_list(&grid_text, "--dropout-grid")?;
    let default_scale = ScoreScale::default();
    let scale = ScoreScale::new(
        pick(score_min, s.get("score-min")?, default_scale.score_min),
        pick(score_max, s.get("score-max")?, default_scale.score_max),
    )?;
    let spec = ScoringSpec { aux_config, d_fuse: pick(d_fuse, s.get("d-fuse")?, 64), dropout_grid, scale };

    let mode = resolve_mode(fixed_encoder, s)?;
    let defaults = TrainConfig::scoring(mode, seed);
    let train_cfg = TrainConfig {
        learning_rate: pick(learning_rate, s.get("learning-rate")?, defaults.learning_rate),
        batch_size: pick(batch_size, s.get("batch-size")?, defaults.batch_size),
        max_epochs: pick(max_epochs, s.get("max-epochs")?, defaults.max_epochs),
        patience: pick(patience, s.get("patience")?, defaults.patience),
        dropout_rate: defaults.dropout_rate,
        mode,
        seed,
    };

    let config_json = json!({
        "folds": k,
        "reserved_valid": reserved,
        "mode": match mode { TrainMode::Finetune => "finetune", TrainMode::Fixed => "fixed" },
        "d_para": spec.aux_config.d_para,
        "d_aux": spec.aux_config.d_aux,
        "d_fuse": spec.d_fuse,
        "dropout_grid": spec.dropout_grid,
        "score_min": spec.scale.score_min,
        "score_max": spec.scale.score_max,
        "learning_rate": train_cfg.learning_rate,
        "batch_size": train_cfg.batch_size,
        "max_epochs": train_cfg.max_epochs,
        "patience": train_cfg.patience,
    });

    Ok(ScoringSetup {
        corpus,
        folds,
        spec,
        train_cfg,
        markers: RebuttalMarkers::bundled(),
        config_json,
    })
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

fn cmd_ingest(a: args::IngestArgs, ctx: &Ctx) -> Result<(), CliError> {
    let format_name = a
        .format
        .or_else(|| ctx.settings.raw("format").map(str::to_owned));
    let format = match format_name.as_deref() {
        Some("jsonl") => CorpusFormat::Jsonl,
        Some("plain-dir") => CorpusFormat::PlainDir,
        Some(other) => {
            return Err(CliError::usage(format!(
                "--format: expected jsonl or plain-dir, got `{other}`"
            )))
        }
        None if a.input.is_dir() => CorpusFormat::PlainDir,
        None => CorpusFormat::Jsonl,
    };
    let essays = ingest_corpus(&a.input, format)?;
    write_corpus_jsonl(&a.output, &essays, None)?;

    let scored = essays.iter().filter(|e| e.gold_score.is_some()).count();
    let prompts: std::collections::BTreeSet<&str> =
        essays.iter().map(|e| e.prompt_id.as_str()).collect();
    println!("ingested {} essays ({} scored, {} prompts)", essays.len(), scored, prompts.len());

    ctx.manifest("ingest", None)
        .config(json!({
            "format": match format { CorpusFormat::Jsonl => "jsonl", CorpusFormat::PlainDir => "plain-dir" },
        }))
        .input(&a.input)
        .output(&a.output)
        .extra(json!({
            "essays": essays.len(),
            "scored": scored,
            "prompts": prompts.len(),
            "paragraphs": essays.iter().map(Essay::n_paragraphs).sum::<usize>(),
            "sentences": essays.iter().map(Essay::n_sentences).sum::<usize>(),
        }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(a: args::SynthArgs, ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = resolve_seed(a.seed, s)?;
    let quality = match (
        a.quality_fixed.or(s.get("quality-fixed")?),
        a.quality_levels
            .clone()
            .or_else(|| s.raw("quality-levels").map(str::to_owned)),
    ) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "--quality-fixed and --quality-levels are mutually exclusive",
            ))
        }
        (Some(q), None) => Some(QualityKnob::Fixed(q)),
        (None, Some(levels)) => {
            Some(QualityKnob::Levels(parse_float_list(&levels, "--quality-levels")?))
        }
        (None, None) => None,
    };
    let cfg = SynthConfig {
        n_essays: pick(a.essays, s.get("essays")?, 200),
        n_prompts: pick(a.prompts, s.get("prompts")?, 4),
        paragraphs_min: pick(a.paragraphs_min, s.get("paragraphs-min")?, 3),
        paragraphs_max: pick(a.paragraphs_max, s.get("paragraphs-max")?, 6),
        quality: quality.clone(),
        seed,
    };
    let essays = generate_synthetic_corpus(&cfg)?;
    write_corpus_jsonl(&a.output, &essays, None)?;
    println!("wrote {} synthetic essays to {}", essays.len(), a.output.display());

    ctx.manifest("synth", Some(seed))
        .config(json!({
            "essays": cfg.n_essays,
            "prompts": cfg.n_prompts,
            "paragraphs_min": cfg.paragraphs_min,
            "paragraphs_max": cfg.paragraphs_max,
            "quality": match &quality {
                None => serde_json::Value::Null,
                Some(QualityKnob::Fixed(q)) => json!({ "fixed": q }),
                Some(QualityKnob::Levels(l)) => json!({ "levels": l }),
            },
        }))
        .output(&a.output)
        .extra(json!({ "essays": essays.len() }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// corrupt
// ---------------------------------------------------------------------------

fn cmd_corrupt(a: args::CorruptArgs, ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = resolve_seed(a.seed, s)?;
    let name = a
        .strategy
        .or_else(|| s.raw("strategy").map(str::to_owned))
        .ok_or_else(|| CliError::usage("--strategy is required (e.g. c-para)"))?;
    let label = CorruptionLabel::parse(&name)
        .filter(|l| l.is_corruption())
        .ok_or_else(|| CliError::usage(format!("--strategy: unknown strategy `{name}`")))?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;

    let corpus = load_corpus_jsonl(&a.input)?;
    let result = corrupt_corpus(&corpus, label, &lexicon, seed);
    let labels = vec![label.name().to_owned(); result.essays.len()];
    write_corpus_jsonl(&a.output, &result.essays, Some(&labels))?;
    println!(
        "corrupted {} of {} essays with {} ({} not corruptible)",
        result.essays.len(),
        corpus.len(),
        label,
        result.skipped.len()
    );

    ctx.manifest("corrupt", Some(seed))
        .config(json!({ "strategy": label.name() }))
        .input(&a.input)
        .output(&a.output)
        .extra(json!({
            "corrupted": result.essays.len(),
            "skipped": result.skipped.iter().map(|(id, why)| json!({ "id": id, "reason": why })).collect::<Vec<_>>(),
        }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

fn cmd_build_dataset(a: args::BuildDatasetArgs, ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = resolve_seed(a.seed, s)?;
    let name = a
        .scheme
        .or_else(|| s.raw("scheme").map(str::to_owned))
        .unwrap_or_else(|| "5way".to_owned());
    let scheme = ClassificationScheme::by_name(&name)
        .ok_or_else(|| CliError::usage(format!("--scheme: unknown scheme `{name}`")))?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;

    let corpus = load_corpus_jsonl(&a.input)?;
    let dataset = build_dc_dataset(&corpus, &scheme, &lexicon, seed)?;
    write_dataset(&a.output, &dataset)?;
    let stats = DatasetManifest::of(&dataset);
    println!(
        "dataset `{}`: {} train / {} valid examples, {} essays skipped",
        dataset.name,
        dataset.train.len(),
        dataset.valid.len(),
        dataset.skipped.len()
    );

    ctx.manifest("build-dataset", Some(seed))
        .config(json!({ "scheme": name }))
        .input(&a.input)
        .output(&a.output)
        .extra(serde_json::to_value(&stats)?)
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// collapse
// ---------------------------------------------------------------------------

fn cmd_collapse(a: args::CollapseArgs, ctx: &Ctx) -> Result<(), CliError> {
    let name = a
        .to
        .or_else(|| ctx.settings.raw("to").map(str::to_owned))
        .ok_or_else(|| CliError::usage("--to is required (5way-to-binary or 5way-to-3way)"))?;
    let collapse = LabelCollapse::by_name(&name)
        .ok_or_else(|| CliError::usage(format!("--to: unknown collapse `{name}`")))?;

    let dataset = read_dataset(&a.input)?;
    let collapsed = collapse_labels(&dataset, &collapse)?;
    write_dataset(&a.output, &collapsed)?;
    println!(
        "collapsed `{}` ({} classes) to `{}` ({} classes)",
        dataset.name,
        dataset.n_classes(),
        collapsed.name,
        collapsed.n_classes()
    );

    ctx.manifest("collapse", None)
        .config(json!({ "to": name }))
        .input(&a.input)
        .output(&a.output)
        .extra(serde_json::to_value(DatasetManifest::of(&collapsed))?)
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

fn cmd_pretrain(a: args::PretrainArgs, ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = resolve_seed(a.seed, s)?;
    let step1 = read_dataset(&a.input)?;
    let step2 = a.step2_data.as_deref().map(read_dataset).transpose()?;

    let mut sources: Vec<&DcDataset> = vec![&step1];
    if let Some(ds) = &step2 {
        sources.push(ds);
    }
    let (vocab, max_tokens) = vocab_over_datasets(&sources);

    let d_model = pick(a.d_model, s.get("d-model")?, 16);
    let n_layers = pick(a.layers, s.get("layers")?, 2);
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        d_model,
        d_ff: pick(a.d_ff, s.get("d-ff")?, 2 * d_model),
        n_layers,
        window: pick(a.window, s.get("window")?, 8),
        n_heads: pick(a.heads, s.get("heads")?, 2),
        tap_layer: pick(a.tap_layer, s.get("tap-layer")?, n_layers),
        dropout_rate: pick(a.dropout, s.get("dropout")?, 0.1),
        max_len: pick(a.max_len, s.get("max-len")?, max_tokens + 8),
        pool: PoolMode::Mean,
    };
    let defaults = TrainConfig::pretrain_step1(seed);
    let train_cfg = TrainConfig {
        learning_rate: pick(a.learning_rate, s.get("learning-rate")?, defaults.learning_rate),
        batch_size: pick(a.batch_size, s.get("batch-size")?, defaults.batch_size),
        max_epochs: pick(a.max_epochs, s.get("max-epochs")?, defaults.max_epochs),
        patience: pick(a.patience, s.get("patience")?, defaults.patience),
        dropout_rate: cfg.dropout_rate,
        mode: TrainMode::Finetune,
        seed,
    };

    let mut model = DcModel::new(cfg.clone(), vocab, step1.n_classes(), seed)?;
    std::fs::create_dir_all(&a.output)?;
    let weights_path = a.output.join("weights.json");

    let report = if a.init_only {
        println!("saved untrained weights ({} classes) to {}", step1.n_classes(), weights_path.display());
        None
    } else {
        let report = pretrain_dc(&mut model, &step1, step2.as_ref(), &train_cfg)?;
        println!(
            "step 1: best accuracy {:.4} at epoch {} ({} epochs run)",
            report.step1.best_accuracy, report.step1.best_epoch, report.step1.epochs_run
        );
        if let Some(step2) = &report.step2 {
            println!(
                "step 2: best accuracy {:.4} at epoch {} ({} epochs run)",
                step2.best_accuracy, step2.best_epoch, step2.epochs_run
            );
        }
        Some(report)
    };
    save_dc_model(&weights_path, &model)?;
    if let Some(report) = &report {
        let report_path = a.output.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(report)? + "\n")?;
    }

    let mut manifest = ctx
        .manifest("pretrain", Some(seed))
        .config(json!({
            "init_only": a.init_only,
            "d_model": cfg.d_model,
            "d_ff": cfg.d_ff,
            "layers": cfg.n_layers,
            "window": cfg.window,
            "heads": cfg.n_heads,
            "tap_layer": cfg.tap_layer,
            "dropout": cfg.dropout_rate,
            "max_len": cfg.max_len,
            "learning_rate": train_cfg.learning_rate,
            "batch_size": train_cfg.batch_size,
            "max_epochs": train_cfg.max_epochs,
            "patience": train_cfg.patience,
        }))
        .input(&a.input)
        .output(&weights_path)
        .extra(json!({
            "classes": step1.n_classes(),
            "vocab": model.vocab.len(),
            "report": report,
        }));
    if let Some(p) = &a.step2_data {
        manifest = manifest.input(p);
    }
    manifest.write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

fn cmd_finetune(a: args::FinetuneArgs, ctx: &Ctx) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed, &ctx.settings)?;
    let setup = scoring_setup(
        ctx,
        &a.input,
        a.folds,
        a.reserved_valid,
        a.fixed_encoder,
        a.d_para,
        a.d_aux,
        a.d_fuse,
        a.dropout_grid.as_deref(),
        a.score_min,
        a.score_max,
        a.learning_rate,
        a.batch_size,
        a.max_epochs,
        a.patience,
        seed,
    )?;
    let base = load_dc_model(&a.weights)?;

    let reports = train_scoring(
        &base,
        &setup.spec,
        &setup.corpus,
        &setup.markers,
        &setup.folds,
        &setup.train_cfg,
    )?;
    write_fold_reports(&a.output, &reports)?;
    let mean = mean_mse(&reports);
    for r in &reports {
        println!(
            "fold {}: test MSE {:.4} (dropout {}, best epoch {})",
            r.fold_index, r.mse, r.chosen_dropout, r.best_epoch
        );
    }
    println!("mean test MSE over {} folds: {mean:.4}", reports.len());

    ctx.manifest("finetune", Some(seed))
        .config(setup.config_json)
        .input(&a.input)
        .input(&a.weights)
        .output(&a.output)
        .extra(json!({
            "mean_mse": mean,
            "folds": reports.iter().map(|r| json!({
                "fold": r.fold_index,
                "mse": r.mse,
                "valid_mse": r.valid_mse,
                "chosen_dropout": r.chosen_dropout,
                "best_epoch": r.best_epoch,
            })).collect::<Vec<_>>(),
        }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunSummary {
    reports_dir: String,
    n_folds: usize,
    n_essays: usize,
    fold_mse: Vec<f64>,
    mean_mse: f64,
}

fn read_fold_reports(dir: &Path) -> Result<Vec<FoldReport>, CliError> {
    let mut reports = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("reports directory {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::data(e.to_string()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if name.starts_with("fold") && name.ends_with(".json") {
            let text = std::fs::read_to_string(&path)?;
            let report: FoldReport = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return Err(CliError::data(format!(
            "no fold<k>.json reports found in {}",
            dir.display()
        )));
    }
    reports.sort_by_key(|r| r.fold_index);
    Ok(reports)
}

fn summarize(dir: &Path, reports: &[FoldReport]) -> RunSummary {
    RunSummary {
        reports_dir: dir.display().to_string(),
        n_folds: reports.len(),
        n_essays: reports.iter().map(|r| r.pairs.len()).sum(),
        fold_mse: reports.iter().map(|r| r.mse).collect(),
        mean_mse: mean_mse(reports),
    }
}

/// Squared error per essay over all test folds (each essay is tested in
/// exactly one fold).
fn per_essay_sq_errors(reports: &[FoldReport]) -> Result<BTreeMap<String, f64>, CliError> {
    let mut errors = BTreeMap::new();
    for r in reports {
        for (id, gold, pred) in &r.pairs {
            let e = (pred - gold) * (pred - gold);
            if errors.insert(id.clone(), e).is_some() {
                return Err(CliError::data(format!("essay {id} tested in more than one fold")));
            }
        }
    }
    Ok(errors)
}

fn cmd_eval(a: args::EvalArgs, ctx: &Ctx) -> Result<(), CliError> {
    let reports_a = read_fold_reports(&a.reports_a)?;
    let summary_a = summarize(&a.reports_a, &reports_a);

    let mut run_b = None;
    let mut comparison = serde_json::Value::Null;
    if let Some(dir_b) = &a.reports_b {
        let reports_b = read_fold_reports(dir_b)?;
        let summary_b = summarize(dir_b, &reports_b);

        let errs_a = per_essay_sq_errors(&reports_a)?;
        let errs_b = per_essay_sq_errors(&reports_b)?;
        if errs_a.len() != errs_b.len() || errs_a.keys().ne(errs_b.keys()) {
            return Err(CliError::data(
                "the two runs scored different essay sets; cannot pair errors".to_owned(),
            ));
        }
        let a_vals: Vec<f64> = errs_a.values().copied().collect();
        let b_vals: Vec<f64> = errs_b.values().copied().collect();
        let w = wilcoxon_signed_rank(&a_vals, &b_vals)?;
        println!(
            "mean MSE: a {:.4} vs b {:.4}; signed-rank p = {:.4} ({} pairs, {})",
            summary_a.mean_mse,
            summary_b.mean_mse,
            w.p_value,
            a_vals.len(),
            if w.exact { "exact" } else { "normal approximation" }
        );
        comparison = json!({
            "n_pairs": a_vals.len(),
            "n_nonzero": w.n_nonzero,
            "w_plus": w.w_plus,
            "w_minus": w.w_minus,
            "statistic": w.statistic,
            "p_value": w.p_value,
            "exact": w.exact,
        });
        run_b = Some(summary_b);
    } else {
        println!(
            "mean MSE {:.4} over {} folds ({} essays)",
            summary_a.mean_mse, summary_a.n_folds, summary_a.n_essays
        );
    }

    let output = json!({
        "run_a": summary_a,
        "run_b": run_b,
        "comparison": comparison,
    });
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&a.output, serde_json::to_string_pretty(&output)? + "\n")?;

    let mut manifest = ctx
        .manifest("eval", None)
        .config(json!({ "paired": a.reports_b.is_some() }))
        .input(&a.reports_a)
        .output(&a.output)
        .extra(output);
    if let Some(dir_b) = &a.reports_b {
        manifest = manifest.input(dir_b);
    }
    manifest.write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(a: args::SweepArgs, ctx: &Ctx) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed, &ctx.settings)?;
    let setup = scoring_setup(
        ctx,
        &a.input,
        a.folds,
        a.reserved_valid,
        a.fixed_encoder,
        a.d_para,
        a.d_aux,
        a.d_fuse,
        a.dropout_grid.as_deref(),
        a.score_min,
        a.score_max,
        a.learning_rate,
        a.batch_size,
        a.max_epochs,
        a.patience,
        seed,
    )?;
    let fold_index = pick(a.fold, ctx.settings.get("fold")?, 0usize);
    let Some(fold) = setup.folds.get(fold_index) else {
        return Err(CliError::usage(format!(
            "--fold: index {fold_index} out of range for {} folds",
            setup.folds.len()
        )));
    };
    let dropout = match a.variant_dropout.or(ctx.settings.get("variant-dropout")?) {
        Some(d) => d,
        None => setup.spec.dropout_grid[0],
    };

    let pretrained = load_dc_model(&a.weights)?;
    let baseline = load_dc_model(&a.baseline_weights)?;
    let variants = [
        SweepVariant { name: "dc-pretrained".to_owned(), base: &pretrained, dropout },
        SweepVariant { name: "baseline".to_owned(), base: &baseline, dropout },
    ];
    let rows = low_resource_sweep(
        &variants,
        &setup.spec,
        &setup.corpus,
        &setup.markers,
        fold,
        &setup.train_cfg,
    )?;
    std::fs::create_dir_all(&a.output)?;
    let csv_path = a.output.join("sweep.csv");
    write_sweep_csv(&csv_path, &rows)?;
    for r in &rows {
        println!(
            "fraction {}/{} (n = {:3}) {:>14}: test MSE {:.4}",
            r.fraction_num, r.fraction_den, r.n_train, r.variant, r.mse
        );
    }

    let mut config = setup.config_json;
    config["fold"] = json!(fold_index);
    config["variant_dropout"] = json!(dropout);
    ctx.manifest("sweep", Some(seed))
        .config(config)
        .input(&a.input)
        .input(&a.weights)
        .input(&a.baseline_weights)
        .output(&csv_path)
        .extra(json!({
            "rows": rows.iter().map(|r| json!({
                "fraction": format!("{}/{}", r.fraction_num, r.fraction_den),
                "n_train": r.n_train,
                "variant": r.variant,
                "mse": r.mse,
            })).collect::<Vec<_>>(),
        }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

fn cmd_export_embeddings(a: args::ExportEmbeddingsArgs, ctx: &Ctx) -> Result<(), CliError> {
    let corpus = load_corpus_jsonl(&a.input)?;
    let model = load_dc_model(&a.weights)?;
    let n = export_embeddings(&model, &corpus, &a.output)?;
    println!("wrote {n} embeddings ({}-dim + 2 principal components)", model.config.d_model);

    ctx.manifest("export-embeddings", None)
        .config(json!({ "d_model": model.config.d_model }))
        .input(&a.input)
        .input(&a.weights)
        .output(&a.output)
        .extra(json!({ "rows": n }))
        .write(&a.output, ctx.started)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck(a: args::GradcheckArgs, ctx: &Ctx) -> Result<(), CliError> {
    use orgscore_core::corpus::ParagraphLabel::{B, C, I, R};

    let dims = a
        .dims
        .or_else(|| ctx.settings.raw("dims").map(str::to_owned))
        .unwrap_or_else(|| "toy".to_owned());
    if dims != "toy" {
        return Err(CliError::usage(format!("--dims: unknown size `{dims}` (expected: toy)")));
    }
    let epsilon = pick(a.epsilon, ctx.settings.get("epsilon")?, 1e-4);
    const TOLERANCE: f64 = 1e-4;

    let cfg = EncoderConfig {
        vocab_size: 12,
        d_model: 8,
        d_ff: 16,
        n_layers: 2,
        window: 4,
        n_heads: 2,
        tap_layer: 1,
        dropout_rate: 0.0,
        max_len: 16,
        pool: PoolMode::Mean,
    };
    let state = EncoderState::init(&cfg, 3, 3);
    let dc_batch = vec![
        (vec![1, 4, 5, 6, 7, 2], 0usize),
        (vec![1, 8, 9, 2], 2usize),
        (vec![1, 5, 10, 2], 1usize),
    ];
    let dc = check_dc_gradients(&cfg, &state, &dc_batch, epsilon);

    let vocab = Vocab::build(["a", "b", "c", "d", "e", "f", "g", "h"]);
    let enc = EncoderState::init(&cfg, 2, 3);
    let model =
        ScoringModel::from_encoder(cfg, vocab, enc, AuxConfig { d_para: 4, d_aux: 8 }, 8, 3)?;
    let scoring_batch = vec![
        (vec![1, 4, 5, 6, 7, 2], vec![I, B, C], 0.75),
        (vec![1, 8, 9, 2], vec![I, B, R, C], 0.25),
        (vec![1, 5, 10, 2], vec![I, C], 0.5),
    ];
    let sc = check_scoring_gradients(&model, &scoring_batch, epsilon);

    let max = dc.max_rel_err().max(sc.max_rel_err());
    println!(
        "classification objective: max relative error {:.3e} over {} scalars",
        dc.max_rel_err(),
        dc.n_checked
    );
    println!(
        "scoring objective:        max relative error {:.3e} over {} scalars",
        sc.max_rel_err(),
        sc.n_checked
    );
    println!("max relative error: {max:.3e} (epsilon {epsilon:.0e}, tolerance {TOLERANCE:.0e})");

    if let Some(out) = &a.output {
        let report = json!({
            "epsilon": epsilon,
            "tolerance": TOLERANCE,
            "max_rel_err": max,
            "classification": { "max_rel_err": dc.max_rel_err(), "scalars": dc.n_checked },
            "scoring": { "max_rel_err": sc.max_rel_err(), "scalars": sc.n_checked },
            "pass": max < TOLERANCE,
        });
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        ctx.manifest("gradcheck", None)
            .config(json!({ "dims": dims, "epsilon": epsilon }))
            .output(out)
            .extra(report)
            .write(out, ctx.started)?;
    }

    if max < TOLERANCE {
        Ok(())
    } else {
        Err(CliError::data(format!("gradient check failed: max relative error {max:.3e}")))
    }
}
