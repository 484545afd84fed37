//! Classification dataset construction: N-way original-vs-corrupted
//! schemes, class-collapse transforms, leakage-free train/validation
//! splits, and a synthetic essay generator for desk-scale experiments.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_essay, CorpusError, Essay, ScoreScale};
use crate::corruption::{
    choose_indices, corrupt, fisher_yates, CorruptionContext, CorruptionLabel,
};
use crate::seeding::{derive_seed, rng_for};
use crate::text_analysis::DiLexicon;

pub const CLS: &str = "[CLS]";
pub const EOS: &str = "[EOS]";
pub const PAR: &str = "[PAR]";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid classification scheme {name}: {reason}")]
    SchemeInvalid { name: String, reason: String },
    #[error("scheme needs {label}, but the corpus cannot support it: {reason}")]
    UnsupportedByCorpus { label: &'static str, reason: String },
    #[error("invalid label collapse {name}: {reason}")]
    CollapseInvalid { name: String, reason: String },
    #[error("label {label} is not in the collapse mapping")]
    UnmappedLabel { label: String },
    #[error("invalid synthetic corpus config: {reason}")]
    SynthConfig { reason: String },
    #[error("{path}:{line}: malformed example: {reason}")]
    MalformedExample { path: PathBuf, line: usize, reason: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// An ordered list of classes for original-vs-corrupted classification.
/// Class 0 is always the uncorrupted original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct ClassificationScheme {
    name: String,
    classes: Vec<CorruptionLabel>,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    name: String,
    classes: Vec<CorruptionLabel>,
}

impl TryFrom<SchemeRepr> for ClassificationScheme {
    type Error = DatasetError;
    fn try_from(repr: SchemeRepr) -> Result<Self, DatasetError> {
        ClassificationScheme::new(repr.name, repr.classes)
    }
}

impl From<ClassificationScheme> for SchemeRepr {
    fn from(s: ClassificationScheme) -> SchemeRepr {
        SchemeRepr { name: s.name, classes: s.classes }
    }
}

impl ClassificationScheme {
    pub fn new(name: String, classes: Vec<CorruptionLabel>) -> Result<Self, DatasetError> {
        let fail = |reason: &str| DatasetError::SchemeInvalid {
            name: name.clone(),
            reason: reason.to_owned(),
        };
        if classes.len() < 2 {
            return Err(fail("at least two classes are required"));
        }
        if classes[0] != CorruptionLabel::Orig {
            return Err(fail("class 0 must be ORIG"));
        }
        for (i, a) in classes.iter().enumerate() {
            if classes[i + 1..].contains(a) {
                return Err(fail(&format!("label {a} appears more than once")));
            }
        }
        Ok(ClassificationScheme { name, classes })
    }

    /// The named schemes offered by the CLI. Binary schemes pit the original
    /// class against a single corruption; the N-way ladder stacks the
    /// paragraph-level corruptions.
    pub fn by_name(name: &str) -> Option<Self> {
        use CorruptionLabel::*;
        let classes = match name {
            "binary-csent" => vec![Orig, CSent],
            "binary-msent" => vec![Orig, MSent],
            "binary-cdi" => vec![Orig, CDi],
            "binary-mdi" => vec![Orig, MDi],
            "binary-cpara" => vec![Orig, CPara],
            "3way" => vec![Orig, CPara, MPara],
            "4way" => vec![Orig, CPara, MPara, ParaDrop],
            "5way" => vec![Orig, CPara, MPara, ParaDrop, ParaRs],
            "6way" => vec![Orig, CPara, MPara, ParaDrop, ParaRs, ParaRd],
            _ => return None,
        };
        Some(ClassificationScheme::new(name.to_owned(), classes).expect("standard scheme"))
    }

    pub const STANDARD_NAMES: [&'static str; 9] = [
        "binary-csent",
        "binary-msent",
        "binary-cdi",
        "binary-mdi",
        "binary-cpara",
        "3way",
        "4way",
        "5way",
        "6way",
    ];

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[CorruptionLabel] {
        &self.classes
    }

    pub fn arity(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_owned()).collect()
    }

    /// True when any class rearranges whole paragraphs; such datasets carry
    /// paragraph-boundary markers.
    pub fn has_paragraph_level(&self) -> bool {
        self.classes.iter().any(|c| c.is_paragraph_level())
    }
}

/// One serialized classification example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcExample {
    #[serde(rename = "class")]
    pub class_index: usize,
    #[serde(rename = "label")]
    pub label_name: String,
    /// Flat token list: `[CLS]`, content (with `[PAR]` separators when the
    /// scheme is paragraph-level), `[EOS]`.
    pub tokens: Vec<String>,
    /// Token offset of each paragraph's first content token; empty when the
    /// example was serialized without paragraph markers.
    pub para_bounds: Vec<usize>,
    #[serde(rename = "essay_id")]
    pub source_essay_id: String,
}

impl DcExample {
    fn validate(&self) -> Result<(), String> {
        if self.tokens.first().map(String::as_str) != Some(CLS) {
            return Err(format!("tokens must start with {CLS}"));
        }
        if self.tokens.last().map(String::as_str) != Some(EOS) {
            return Err(format!("tokens must end with {EOS}"));
        }
        if let Some(&b) = self.para_bounds.iter().find(|&&b| b == 0 || b >= self.tokens.len()) {
            return Err(format!("paragraph bound {b} outside token range"));
        }
        Ok(())
    }
}

/// Serializes an essay into the token stream of one example.
/// With `par_markers`, a `[PAR]` token separates consecutive paragraphs and
/// the returned offsets point at each paragraph's first content token.
pub fn example_tokens(essay: &Essay, par_markers: bool) -> (Vec<String>, Vec<usize>) {
    let mut tokens = vec![CLS.to_owned()];
    let mut bounds = Vec::new();
    for (i, para) in essay.paragraphs.iter().enumerate() {
        if par_markers {
            if i > 0 {
                tokens.push(PAR.to_owned());
            }
            bounds.push(tokens.len());
        }
        for sentence in &para.sentences {
            tokens.extend(sentence.tokens.iter().cloned());
        }
    }
    tokens.push(EOS.to_owned());
    (tokens, bounds)
}

/// An essay skipped for one label, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub essay_id: String,
    pub label: String,
    pub reason: String,
}

/// A built classification dataset: examples split 80/20 by essay, plus the
/// bookkeeping that makes the build reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcDataset {
    /// Scheme or collapse name this dataset was built with.
    pub name: String,
    /// Class names by index.
    pub class_names: Vec<String>,
    pub seed: u64,
    pub train: Vec<DcExample>,
    pub valid: Vec<DcExample>,
    pub skipped: Vec<SkipEntry>,
}

impl DcDataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(examples: &[DcExample], n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_classes];
        for e in examples {
            counts[e.class_index] += 1;
        }
        counts
    }
}

/// Split assignment: an essay's examples all go to one side, decided by a
/// hash of the global seed and the essay id (< 80% of the hash range →
/// train). Content plays no role, so an original and its corruptions can
/// never straddle the split.
pub fn is_train_essay(seed: u64, essay_id: &str) -> bool {
    let h = derive_seed(seed, &["split", essay_id]);
    (h as f64) < (u64::MAX as f64) * 0.8
}

fn check_corpus_support(
    corpus: &[Essay],
    scheme: &ClassificationScheme,
) -> Result<(), DatasetError> {
    if scheme.classes().contains(&CorruptionLabel::ParaRs) {
        let mut per_prompt: BTreeMap<&str, usize> = BTreeMap::new();
        for e in corpus {
            *per_prompt.entry(e.prompt_id.as_str()).or_default() += 1;
        }
        if !per_prompt.values().any(|&n| n >= 2) {
            return Err(DatasetError::UnsupportedByCorpus {
                label: "PARA_RS",
                reason: "no prompt has two or more essays, so no same-prompt donor exists".into(),
            });
        }
    }
    if scheme.classes().contains(&CorruptionLabel::ParaRd) {
        let first = corpus.first().map(|e| e.prompt_id.as_str());
        if corpus.iter().all(|e| Some(e.prompt_id.as_str()) == first) {
            return Err(DatasetError::UnsupportedByCorpus {
                label: "PARA_RD",
                reason: "corpus has fewer than two prompts, so no cross-prompt donor exists".into(),
            });
        }
    }
    Ok(())
}

/// Builds the N-way dataset: per essay, one original example plus one
/// corrupted example per corruption class (skips logged per label), split
/// 80/20 by essay id. Corruption runs per-essay in parallel with derived
/// seeds, so output is independent of thread count.
pub fn build_dc_dataset(
    corpus: &[Essay],
    scheme: &ClassificationScheme,
    lexicon: &DiLexicon,
    seed: u64,
) -> Result<DcDataset, DatasetError> {
    use rayon::prelude::*;
    check_corpus_support(corpus, scheme)?;
    let par_markers = scheme.has_paragraph_level();

    struct PerEssay {
        examples: Vec<DcExample>,
        skipped: Vec<SkipEntry>,
        train: bool,
    }

    let per_essay: Vec<PerEssay> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let essay = &corpus[i];
            let mut examples = Vec::new();
            let mut skipped = Vec::new();
            for (class_index, &label) in scheme.classes().iter().enumerate() {
                let produced = if label == CorruptionLabel::Orig {
                    Some(essay.clone())
                } else {
                    let ctx = CorruptionContext::for_essay(corpus, i, seed);
                    match corrupt(essay, label, lexicon, &ctx) {
                        Ok(corrupted) => Some(corrupted),
                        Err(err) => {
                            skipped.push(SkipEntry {
                                essay_id: essay.id.clone(),
                                label: label.name().to_owned(),
                                reason: err.to_string(),
                            });
                            None
                        }
                    }
                };
                if let Some(doc) = produced {
                    let (tokens, para_bounds) = example_tokens(&doc, par_markers);
                    examples.push(DcExample {
                        class_index,
                        label_name: label.name().to_owned(),
                        tokens,
                        para_bounds,
                        source_essay_id: essay.id.clone(),
                    });
                }
            }
            PerEssay { examples, skipped, train: is_train_essay(seed, &essay.id) }
        })
        .collect();

    let mut dataset = DcDataset {
        name: scheme.name().to_owned(),
        class_names: scheme.class_names(),
        seed,
        train: Vec::new(),
        valid: Vec::new(),
        skipped: Vec::new(),
    };
    for entry in per_essay {
        let side = if entry.train { &mut dataset.train } else { &mut dataset.valid };
        side.extend(entry.examples);
        dataset.skipped.extend(entry.skipped);
    }
    Ok(dataset)
}

/// A total remapping of corruption labels onto a smaller class set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCollapse {
    pub name: String,
    pub class_names: Vec<String>,
    mapping: BTreeMap<CorruptionLabel, usize>,
}

impl LabelCollapse {
    pub fn new(
        name: String,
        class_names: Vec<String>,
        pairs: Vec<(CorruptionLabel, usize)>,
    ) -> Result<Self, DatasetError> {
        let fail = |reason: String| DatasetError::CollapseInvalid { name: name.clone(), reason };
        let n = class_names.len();
        if n < 2 {
            return Err(fail("a collapse needs at least two classes".into()));
        }
        let mut mapping = BTreeMap::new();
        for (label, class) in pairs {
            if class >= n {
                return Err(fail(format!("label {label} maps to out-of-range class {class}")));
            }
            if mapping.insert(label, class).is_some() {
                return Err(fail(format!("label {label} mapped twice")));
            }
        }
        let orig_class = match mapping.get(&CorruptionLabel::Orig) {
            Some(&c) => c,
            None => return Err(fail("ORIG must be in the mapping".into())),
        };
        if mapping.iter().any(|(&l, &c)| l != CorruptionLabel::Orig && c == orig_class) {
            return Err(fail("no corruption may share the original class".into()));
        }
        for class in 0..n {
            if !mapping.values().any(|&c| c == class) {
                return Err(fail(format!("class {class} ({}) has no labels", class_names[class])));
            }
        }
        Ok(LabelCollapse { name, class_names, mapping })
    }

    /// 5-way → binary: original vs any corruption.
    pub fn five_way_to_binary() -> Self {
        use CorruptionLabel::*;
        LabelCollapse::new(
            "5way-to-binary".into(),
            vec!["ORIG".into(), "CORRUPTED".into()],
            vec![(Orig, 0), (CPara, 1), (MPara, 1), (ParaDrop, 1), (ParaRs, 1)],
        )
        .expect("standard collapse")
    }

    /// 5-way → 3-way: original vs fully shuffled vs partially corrupted.
    pub fn five_way_to_three_way() -> Self {
        use CorruptionLabel::*;
        LabelCollapse::new(
            "5way-to-3way".into(),
            vec!["ORIG".into(), "C_PARA".into(), "PARTIAL".into()],
            vec![(Orig, 0), (CPara, 1), (MPara, 2), (ParaDrop, 2), (ParaRs, 2)],
        )
        .expect("standard collapse")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "5way-to-binary" => Some(Self::five_way_to_binary()),
            "5way-to-3way" => Some(Self::five_way_to_three_way()),
            _ => None,
        }
    }

    pub fn class_of(&self, label: CorruptionLabel) -> Option<usize> {
        self.mapping.get(&label).copied()
    }

    fn rewrite(&self, examples: &[DcExample]) -> Result<Vec<DcExample>, DatasetError> {
        examples
            .iter()
            .map(|e| {
                let label = CorruptionLabel::parse(&e.label_name)
                    .ok_or_else(|| DatasetError::UnmappedLabel { label: e.label_name.clone() })?;
                let class_index = self
                    .class_of(label)
                    .ok_or_else(|| DatasetError::UnmappedLabel { label: e.label_name.clone() })?;
                Ok(DcExample { class_index, ..e.clone() })
            })
            .collect()
    }
}

/// Rewrites class indices through the collapse. Example order, tokens, and
/// split membership are untouched; only `class_index` changes.
pub fn collapse_labels(
    dataset: &DcDataset,
    collapse: &LabelCollapse,
) -> Result<DcDataset, DatasetError> {
    Ok(DcDataset {
        name: collapse.name.clone(),
        class_names: collapse.class_names.clone(),
        seed: dataset.seed,
        train: collapse.rewrite(&dataset.train)?,
        valid: collapse.rewrite(&dataset.valid)?,
        skipped: dataset.skipped.clone(),
    })
}

/// Writes one example per line as JSON.
pub fn write_examples_jsonl(path: &Path, examples: &[DcExample]) -> Result<(), DatasetError> {
    let file =
        fs::File::create(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let mut out = std::io::BufWriter::new(file);
    for example in examples {
        let line = serde_json::to_string(example).expect("example serializes");
        writeln!(out, "{line}").map_err(|source| DatasetError::Io { path: path.into(), source })?;
    }
    Ok(())
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<DcExample>, DatasetError> {
    let file =
        fs::File::open(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let example: DcExample = serde_json::from_str(&line).map_err(|e| {
            DatasetError::MalformedExample { path: path.into(), line: line_no, reason: e.to_string() }
        })?;
        example.validate().map_err(|reason| DatasetError::MalformedExample {
            path: path.into(),
            line: line_no,
            reason,
        })?;
        examples.push(example);
    }
    Ok(examples)
}

/// Summary sidecar written next to a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub train_counts: Vec<usize>,
    pub valid_counts: Vec<usize>,
    pub skipped: Vec<SkipEntry>,
}

impl DatasetManifest {
    pub fn of(dataset: &DcDataset) -> Self {
        DatasetManifest {
            name: dataset.name.clone(),
            class_names: dataset.class_names.clone(),
            seed: dataset.seed,
            train_counts: DcDataset::class_counts(&dataset.train, dataset.n_classes()),
            valid_counts: DcDataset::class_counts(&dataset.valid, dataset.n_classes()),
            skipped: dataset.skipped.clone(),
        }
    }
}

/// Writes `train.jsonl`, `valid.jsonl`, and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &DcDataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.into(), source })?;
    write_examples_jsonl(&dir.join("train.jsonl"), &dataset.train)?;
    write_examples_jsonl(&dir.join("valid.jsonl"), &dataset.valid)?;
    let manifest = DatasetManifest::of(dataset);
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|source| DatasetError::Io { path, source })?;
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<DcDataset, DatasetError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_json = fs::read_to_string(&manifest_path)
        .map_err(|source| DatasetError::Io { path: manifest_path.clone(), source })?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_json).map_err(|e| {
        DatasetError::MalformedExample { path: manifest_path, line: 0, reason: e.to_string() }
    })?;
    Ok(DcDataset {
        name: manifest.name,
        class_names: manifest.class_names,
        seed: manifest.seed,
        train: read_examples_jsonl(&dir.join("train.jsonl"))?,
        valid: read_examples_jsonl(&dir.join("valid.jsonl"))?,
        skipped: manifest.skipped,
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// How much structural damage to pre-apply to generated essays.
#[derive(Debug, Clone, PartialEq)]
pub enum QualityKnob {
    /// Same degradation `q ∈ [0, 1]` for every essay.
    Fixed(f64),
    /// Essay `i` gets `levels[i % levels.len()]`, giving a corpus with a
    /// spread of gold scores.
    Levels(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_essays: usize,
    pub n_prompts: usize,
    pub paragraphs_min: usize,
    pub paragraphs_max: usize,
    pub quality: Option<QualityKnob>,
    pub seed: u64,
}

const TOPICS: [[&str; 8]; 8] = [
    ["computers", "internet", "phones", "software", "robots", "devices", "screens", "networks"],
    ["students", "teachers", "homework", "classes", "lessons", "exams", "libraries", "grades"],
    ["forests", "rivers", "climate", "pollution", "recycling", "wildlife", "oceans", "energy"],
    ["athletes", "training", "teamwork", "matches", "coaches", "stadiums", "fitness", "victory"],
    ["doctors", "exercise", "nutrition", "sleep", "medicine", "hospitals", "habits", "wellness"],
    ["journeys", "cultures", "airports", "luggage", "maps", "hotels", "tourists", "passports"],
    ["melodies", "concerts", "instruments", "rhythm", "singers", "albums", "audiences", "harmony"],
    ["cooking", "recipes", "vegetables", "flavors", "kitchens", "meals", "markets", "spices"],
];

const NOUNS: [&str; 24] = [
    "community", "family", "society", "future", "freedom", "knowledge", "effort", "progress",
    "habit", "balance", "practice", "support", "growth", "safety", "value", "purpose", "skill",
    "change", "respect", "trust", "courage", "wisdom", "patience", "focus",
];

const VERBS: [&str; 12] = [
    "improves", "changes", "shapes", "supports", "strengthens", "challenges", "builds",
    "protects", "teaches", "inspires", "guides", "rewards",
];

const ADJS: [&str; 12] = [
    "important", "modern", "helpful", "serious", "common", "valuable", "difficult", "popular",
    "necessary", "powerful", "simple", "lasting",
];

/// Indicator phrases that open body paragraphs, cycled in order.
const BODY_DIS: [&str; 10] = [
    "first of all",
    "secondly",
    "thirdly",
    "furthermore",
    "moreover",
    "in addition",
    "what is more",
    "besides",
    "additionally",
    "similarly",
];

fn pick<'a, R: Rng>(items: &'a [&'a str], rng: &mut R) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

/// Generates templated argumentative essays: an introduction built from the
/// prompt's topic words, body paragraphs opened by cycled indicator
/// phrases, and an "in conclusion" paragraph. Each essay carries two
/// signature nouns woven through all its paragraphs, so material pasted in
/// from another essay is statistically recognizable.
///
/// With a quality knob, essay structure is pre-scrambled in proportion to
/// `q` and the gold score is the rescaled `1 − q` — score is a monotone
/// function of structural intactness.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<Essay>, DatasetError> {
    let fail = |reason: &str| DatasetError::SynthConfig { reason: reason.to_owned() };
    if cfg.n_prompts == 0 {
        return Err(fail("n_prompts must be at least 1"));
    }
    if cfg.n_essays < cfg.n_prompts {
        return Err(fail("n_essays must be at least n_prompts"));
    }
    if cfg.paragraphs_min < 2 || cfg.paragraphs_min > cfg.paragraphs_max {
        return Err(fail("paragraph range must be non-empty with a minimum of 2"));
    }
    if let Some(knob) = &cfg.quality {
        let values: &[f64] = match knob {
            QualityKnob::Fixed(q) => std::slice::from_ref(q),
            QualityKnob::Levels(levels) => {
                if levels.is_empty() {
                    return Err(fail("quality levels list is empty"));
                }
                levels
            }
        };
        if values.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(fail("quality values must lie in [0, 1]"));
        }
    }

    let mut corpus = Vec::with_capacity(cfg.n_essays);
    for i in 0..cfg.n_essays {
        let id = format!("s{i:05}");
        let prompt_index = i % cfg.n_prompts;
        let prompt_id = format!("p{prompt_index}");
        let topic = &TOPICS[prompt_index % TOPICS.len()];
        let mut rng = rng_for(cfg.seed, &["synth", &id]);

        let sig_a = NOUNS[rng.gen_range(0..NOUNS.len())];
        let sig_b = loop {
            let n = NOUNS[rng.gen_range(0..NOUNS.len())];
            if n != sig_a {
                break n;
            }
        };

        let m = rng.gen_range(cfg.paragraphs_min..=cfg.paragraphs_max);
        let mut paragraphs: Vec<String> = Vec::with_capacity(m);
        let intro = format!(
            "many people believe that {} {} {} in daily life. this essay explains why {} and {} matter for {}.",
            pick(topic, &mut rng),
            pick(&VERBS, &mut rng),
            pick(topic, &mut rng),
            sig_a,
            sig_b,
            pick(topic, &mut rng),
        );
        paragraphs.push(intro);
        for body in 0..m.saturating_sub(2) {
            let di = BODY_DIS[body % BODY_DIS.len()];
            paragraphs.push(format!(
                "{}, {} {} the {} {} of {}.",
                di,
                sig_a,
                pick(&VERBS, &mut rng),
                pick(&ADJS, &mut rng),
                pick(topic, &mut rng),
                pick(&NOUNS, &mut rng),
            ));
        }
        paragraphs.push(format!(
            "in conclusion, {} and {} show that {} {} {}.",
            sig_a,
            sig_b,
            pick(topic, &mut rng),
            pick(&VERBS, &mut rng),
            pick(topic, &mut rng),
        ));

        let quality = match &cfg.quality {
            None => None,
            Some(QualityKnob::Fixed(q)) => Some(*q),
            Some(QualityKnob::Levels(levels)) => Some(levels[i % levels.len()]),
        };
        let gold_score = match quality {
            None => None,
            Some(q) => {
                scramble_paragraphs(&mut paragraphs, q, &mut rng);
                Some(crate::corpus::rescale_score(1.0 - q, ScoreScale::default()))
            }
        };

        corpus.push(build_essay(id, prompt_id, &paragraphs, gold_score, "synthetic")?);
    }
    Ok(corpus)
}

/// Damages paragraph order in proportion to `q`: with `k = round(q·M)`
/// positions affected, `k = 0` leaves the essay intact, `k = 1` moves one
/// paragraph somewhere else, and `k ≥ 2` shuffles the chosen positions
/// among themselves (identity arrangements rejected, rotation fallback).
fn scramble_paragraphs<R: Rng>(paragraphs: &mut Vec<String>, q: f64, rng: &mut R) {
    let m = paragraphs.len();
    let k = ((q * m as f64).round() as usize).min(m);
    match k {
        0 => {}
        1 => {
            let src = rng.gen_range(0..m);
            let dst = loop {
                let d = rng.gen_range(0..m);
                if d != src {
                    break d;
                }
            };
            let p = paragraphs.remove(src);
            paragraphs.insert(dst, p);
        }
        _ => {
            let positions = choose_indices(m, k, rng);
            let contents: Vec<String> =
                positions.iter().map(|&p| paragraphs[p].clone()).collect();
            let mut shuffled = contents.clone();
            let mut changed = false;
            for _ in 0..32 {
                fisher_yates(&mut shuffled, rng);
                if shuffled != contents {
                    changed = true;
                    break;
                }
            }
            if !changed {
                shuffled.rotate_left(1);
            }
            for (&pos, text) in positions.iter().zip(shuffled) {
                paragraphs[pos] = text;
            }
        }
    }
}
