//! Document model, corpus ingestion/serialization, and score normalization.
//!
//! Essays are immutable after ingestion: corruption and every other
//! transformation produce new `Essay` values, so essays are safe to share
//! across threads.
//!
//! Corpus JSONL contract (one UTF-8 object per line):
//! `id` (string), `prompt_id` (string), exactly one of `text` (string, blank
//! lines separate paragraphs) or `paragraphs` (list of strings), optional
//! `score` (number), optional `corruption` (string, written by the corrupt
//! pipeline to name the strategy applied).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text_analysis;

/// One sentence as a list of lowercase tokens. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
}

/// Paragraph function labels: Introduction, Body, Rebuttal, Conclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParagraphLabel {
    I,
    B,
    R,
    C,
}

impl ParagraphLabel {
    /// Stable index in 0..4, used by the label-embedding table.
    pub fn index(self) -> usize {
        match self {
            ParagraphLabel::I => 0,
            ParagraphLabel::B => 1,
            ParagraphLabel::R => 2,
            ParagraphLabel::C => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParagraphLabel::I => "I",
            ParagraphLabel::B => "B",
            ParagraphLabel::R => "R",
            ParagraphLabel::C => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub sentences: Vec<Sentence>,
    pub function_label: Option<ParagraphLabel>,
}

impl Paragraph {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Paragraph { sentences, function_label: None }
    }

    /// All tokens of the paragraph in order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    /// Paragraph text reconstructed as space-joined tokens.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&s.tokens.join(" "));
        }
        out
    }
}

/// An essay: ordered paragraphs plus identity and scoring metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Essay {
    pub id: String,
    pub prompt_id: String,
    pub paragraphs: Vec<Paragraph>,
    /// Gold organization score on the corpus scale, when annotated.
    pub gold_score: Option<f64>,
    /// Origin tag: "jsonl", "plain_dir", "synthetic", ...
    pub source: String,
}

impl Essay {
    pub fn n_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.paragraphs.iter().map(|p| p.sentences.len()).sum()
    }

    /// All sentences in document order, flattened across paragraphs.
    pub fn flat_sentences(&self) -> Vec<Sentence> {
        self.paragraphs.iter().flat_map(|p| p.sentences.iter().cloned()).collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.paragraphs
            .iter()
            .map(|p| p.sentences.iter().map(|s| s.tokens.len()).sum::<usize>())
            .sum()
    }
}

/// The corpus score range; scores map linearly onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub score_min: f64,
    pub score_max: f64,
}

impl Default for ScoreScale {
    fn default() -> Self {
        ScoreScale { score_min: 1.0, score_max: 4.0 }
    }
}

impl ScoreScale {
    pub fn new(score_min: f64, score_max: f64) -> Result<Self, CorpusError> {
        if !(score_min < score_max) || !score_min.is_finite() || !score_max.is_finite() {
            return Err(CorpusError::InvalidScale { score_min, score_max });
        }
        Ok(ScoreScale { score_min, score_max })
    }

    pub fn range(&self) -> f64 {
        self.score_max - self.score_min
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record{}: {reason}", id.as_deref().map(|i| format!(" (id {i})")).unwrap_or_default())]
    MalformedRecord { path: PathBuf, line: usize, id: Option<String>, reason: String },
    #[error("essay {id} is empty: no non-blank paragraphs")]
    EmptyDocument { id: String },
    #[error("duplicate essay id {id}")]
    DuplicateId { id: String },
    #[error("score {value} outside scale [{score_min}, {score_max}]")]
    ScoreOutOfRange { value: f64, score_min: f64, score_max: f64 },
    #[error("invalid score scale: min {score_min} must be < max {score_max}")]
    InvalidScale { score_min: f64, score_max: f64 },
}

/// Supported corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line; see the module docs for the key contract.
    Jsonl,
    /// A directory of plain-text files, one essay per file, blank lines
    /// separating paragraphs. The essay id is the file stem; the prompt id
    /// is the name of the file's parent directory when the file sits in a
    /// subdirectory of the ingest root, else "default".
    PlainDir,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    prompt_id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    paragraphs: Option<Vec<String>>,
    #[serde(default)]
    score: Option<f64>,
    // Present on corrupted corpora; carried through untouched.
    #[serde(default)]
    #[allow(dead_code)]
    corruption: Option<String>,
}

/// Reads a corpus and returns essays in lexicographic id order.
///
/// Text is lowercased during tokenization; paragraphs are split on blank
/// lines; sentences and tokens come from [`text_analysis`]. Malformed
/// records fail with their line number; empty documents fail with their id.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Essay>, CorpusError> {
    let mut essays = match format {
        CorpusFormat::Jsonl => ingest_jsonl(path)?,
        CorpusFormat::PlainDir => ingest_plain_dir(path)?,
    };
    essays.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in essays.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(CorpusError::DuplicateId { id: pair[0].id.clone() });
        }
    }
    Ok(essays)
}

fn ingest_jsonl(path: &Path) -> Result<Vec<Essay>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let reader = BufReader::new(file);
    let mut essays = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedRecord {
                path: path.into(),
                line: line_no,
                id: None,
                reason: e.to_string(),
            }
        })?;
        let id_hint = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
        let record: RawRecord = serde_json::from_value(value).map_err(|e| {
            CorpusError::MalformedRecord {
                path: path.into(),
                line: line_no,
                id: id_hint.clone(),
                reason: e.to_string(),
            }
        })?;
        let paragraph_texts: Vec<String> = match (&record.text, &record.paragraphs) {
            (Some(_), Some(_)) => {
                return Err(CorpusError::MalformedRecord {
                    path: path.into(),
                    line: line_no,
                    id: Some(record.id),
                    reason: "record has both `text` and `paragraphs`; exactly one is allowed".into(),
                })
            }
            (Some(text), None) => split_blank_line_paragraphs(text),
            (None, Some(paragraphs)) => paragraphs.clone(),
            (None, None) => {
                return Err(CorpusError::MalformedRecord {
                    path: path.into(),
                    line: line_no,
                    id: Some(record.id),
                    reason: "record has neither `text` nor `paragraphs`".into(),
                })
            }
        };
        essays.push(build_essay(
            record.id,
            record.prompt_id,
            &paragraph_texts,
            record.score,
            "jsonl",
        )?);
    }
    Ok(essays)
}

fn ingest_plain_dir(root: &Path) -> Result<Vec<Essay>, CorpusError> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: root.into(),
            source: std::io::Error::other(e.to_string()),
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type().is_file() && !name.starts_with('.') {
            files.push(entry.path().to_path_buf());
        }
    }
    files.sort();
    let mut essays = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file)
            .map_err(|source| CorpusError::Io { path: file.clone(), source })?;
        let id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.to_string_lossy().into_owned());
        let prompt_id = match file.parent() {
            Some(parent) if parent != root => {
                parent.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            }
            _ => "default".to_owned(),
        };
        let paragraph_texts = split_blank_line_paragraphs(&text);
        essays.push(build_essay(id, prompt_id, &paragraph_texts, None, "plain_dir")?);
    }
    Ok(essays)
}

/// Splits raw text into paragraph chunks on runs of blank lines.
pub fn split_blank_line_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                paragraphs.push(current.trim().to_owned());
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(line.trim());
        }
    }
    if !current.trim().is_empty() {
        paragraphs.push(current.trim().to_owned());
    }
    paragraphs
}

/// Segments paragraph texts into sentences/tokens and assembles an `Essay`.
/// Blank paragraphs are dropped; an essay with no content is rejected.
pub fn build_essay(
    id: String,
    prompt_id: String,
    paragraph_texts: &[String],
    gold_score: Option<f64>,
    source: &str,
) -> Result<Essay, CorpusError> {
    let mut paragraphs = Vec::new();
    for text in paragraph_texts {
        let mut sentences = Vec::new();
        for sentence_text in text_analysis::split_sentences(text) {
            let tokens = text_analysis::tokenize(&sentence_text);
            if !tokens.is_empty() {
                sentences.push(Sentence { tokens });
            }
        }
        if !sentences.is_empty() {
            paragraphs.push(Paragraph::new(sentences));
        }
    }
    if paragraphs.is_empty() {
        return Err(CorpusError::EmptyDocument { id });
    }
    Ok(Essay { id, prompt_id, paragraphs, gold_score, source: source.to_owned() })
}

/// Maps a gold score onto [0, 1]: (s − min) / (max − min).
pub fn normalize_score(s: f64, scale: ScoreScale) -> Result<f64, CorpusError> {
    if s < scale.score_min || s > scale.score_max || !s.is_finite() {
        return Err(CorpusError::ScoreOutOfRange {
            value: s,
            score_min: scale.score_min,
            score_max: scale.score_max,
        });
    }
    Ok((s - scale.score_min) / scale.range())
}

/// Inverse of [`normalize_score`]: min + y·(max − min).
///
/// Model predictions come out of a sigmoid and are always in [0, 1], but
/// serialized inputs can stray; out-of-range values are clamped with a
/// warning on stderr.
pub fn rescale_score(y: f64, scale: ScoreScale) -> f64 {
    let clamped = y.clamp(0.0, 1.0);
    if clamped != y {
        eprintln!("warning: normalized score {y} outside [0, 1]; clamped to {clamped}");
    }
    scale.score_min + clamped * scale.range()
}

/// One output row for corpus serialization.
#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    prompt_id: &'a str,
    paragraphs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corruption: Option<&'a str>,
}

/// Writes essays as corpus JSONL. `corruption[i]`, when provided, names the
/// corruption applied to `essays[i]` and is emitted as the `corruption` key.
pub fn write_corpus_jsonl(
    path: &Path,
    essays: &[Essay],
    corruption: Option<&[String]>,
) -> Result<(), CorpusError> {
    if let Some(labels) = corruption {
        assert_eq!(labels.len(), essays.len(), "one corruption label per essay");
    }
    let file = fs::File::create(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let mut out = std::io::BufWriter::new(file);
    for (i, essay) in essays.iter().enumerate() {
        let record = OutRecord {
            id: &essay.id,
            prompt_id: &essay.prompt_id,
            paragraphs: essay.paragraphs.iter().map(|p| p.text()).collect(),
            score: essay.gold_score,
            corruption: corruption.map(|labels| labels[i].as_str()),
        };
        let line = serde_json::to_string(&record).expect("corpus record serializes");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io { path: path.into(), source })?;
    }
    Ok(())
}

/// Groups corpus indices by prompt id, in first-seen order per group.
pub fn indices_by_prompt(essays: &[Essay]) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in essays.iter().enumerate() {
        map.entry(e.prompt_id.clone()).or_default().push(i);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale14() -> ScoreScale {
        ScoreScale::default()
    }

    #[test]
    fn normalize_maps_scale_ends_and_midpoint() {
        assert_eq!(normalize_score(1.0, scale14()).unwrap(), 0.0);
        assert_eq!(normalize_score(4.0, scale14()).unwrap(), 1.0);
        assert_eq!(normalize_score(2.5, scale14()).unwrap(), 0.5);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        assert!(matches!(
            normalize_score(4.5, scale14()),
            Err(CorpusError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            normalize_score(0.5, scale14()),
            Err(CorpusError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn rescale_inverts_normalize() {
        assert_eq!(rescale_score(0.5, scale14()), 2.5);
        assert_eq!(rescale_score(0.0, scale14()), 1.0);
        let y = normalize_score(3.5, scale14()).unwrap();
        assert!((rescale_score(y, scale14()) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn rescale_clamps_out_of_range_input() {
        assert_eq!(rescale_score(1.25, scale14()), 4.0);
        assert_eq!(rescale_score(-0.25, scale14()), 1.0);
    }

    #[test]
    fn scale_requires_min_below_max() {
        assert!(ScoreScale::new(2.0, 2.0).is_err());
        assert!(ScoreScale::new(4.0, 1.0).is_err());
        assert!(ScoreScale::new(0.0, 6.0).is_ok());
    }

    fn write_temp_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn ingest_jsonl_segments_paragraphs_and_sentences() {
        let f = write_temp_jsonl(&[
            r#"{"id":"e1","prompt_id":"p1","text":"A b. C d.\n\nE f."}"#,
        ]);
        let essays = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(essays.len(), 1);
        let e = &essays[0];
        assert_eq!(e.n_paragraphs(), 2);
        let sents: Vec<Vec<String>> =
            e.paragraphs[0].sentences.iter().map(|s| s.tokens.clone()).collect();
        assert_eq!(
            sents,
            vec![vec!["a", "b", "."], vec!["c", "d", "."]]
                .into_iter()
                .map(|v: Vec<&str>| v.into_iter().map(String::from).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        );
        assert_eq!(e.paragraphs[1].sentences[0].tokens, vec!["e", "f", "."]);
    }

    #[test]
    fn ingest_empty_file_gives_empty_corpus() {
        let f = write_temp_jsonl(&[]);
        let essays = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert!(essays.is_empty());
    }

    #[test]
    fn ingest_reports_missing_prompt_id_with_record_identity() {
        let f = write_temp_jsonl(&[
            r#"{"id":"ok","prompt_id":"p1","text":"Fine."}"#,
            r#"{"id":"bad","text":"Missing prompt."}"#,
        ]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        match err {
            CorpusError::MalformedRecord { line, id, reason, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id.as_deref(), Some("bad"));
                assert!(reason.contains("prompt_id"), "reason: {reason}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn ingest_rejects_both_text_and_paragraphs() {
        let f = write_temp_jsonl(&[
            r#"{"id":"e","prompt_id":"p","text":"a.","paragraphs":["b."]}"#,
        ]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn ingest_rejects_empty_document_with_id() {
        let f = write_temp_jsonl(&[r#"{"id":"hollow","prompt_id":"p","text":"   \n\n  "}"#]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyDocument { ref id } if id == "hollow"), "{err}");
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let f = write_temp_jsonl(&[
            r#"{"id":"dup","prompt_id":"p","text":"One."}"#,
            r#"{"id":"dup","prompt_id":"p","text":"Two."}"#,
        ]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id } if id == "dup"));
    }

    #[test]
    fn ingest_orders_by_id_and_is_deterministic() {
        let f = write_temp_jsonl(&[
            r#"{"id":"zz","prompt_id":"p","text":"Last."}"#,
            r#"{"id":"aa","prompt_id":"p","text":"First."}"#,
            r#"{"id":"mm","prompt_id":"p","text":"Middle."}"#,
        ]);
        let first = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        let second = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        let ids: Vec<&str> = first.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["aa", "mm", "zz"]);
        assert_eq!(first, second);
    }

    #[test]
    fn ingest_plain_dir_reads_nested_prompts() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("prompt1");
        fs::create_dir(&p1).unwrap();
        fs::write(p1.join("essay_b.txt"), "First paragraph here.\n\nSecond one.").unwrap();
        fs::write(dir.path().join("essay_a.txt"), "Flat essay.").unwrap();
        let essays = ingest_corpus(dir.path(), CorpusFormat::PlainDir).unwrap();
        assert_eq!(essays.len(), 2);
        assert_eq!(essays[0].id, "essay_a");
        assert_eq!(essays[0].prompt_id, "default");
        assert_eq!(essays[1].id, "essay_b");
        assert_eq!(essays[1].prompt_id, "prompt1");
        assert_eq!(essays[1].n_paragraphs(), 2);
    }

    #[test]
    fn corpus_roundtrip_through_jsonl() {
        let f = write_temp_jsonl(&[
            r#"{"id":"e1","prompt_id":"p1","text":"A b. C d.\n\nE f.","score":3.0}"#,
        ]);
        let essays = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus_jsonl(out.path(), &essays, None).unwrap();
        let reread = ingest_corpus(out.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(essays, reread);
    }

    #[test]
    fn lowercasing_is_idempotent() {
        let texts = vec!["Mixed CASE Text. More HERE.".to_owned()];
        let once = build_essay("a".into(), "p".into(), &texts, None, "t").unwrap();
        let again_texts: Vec<String> = once.paragraphs.iter().map(|p| p.text()).collect();
        let twice = build_essay("a".into(), "p".into(), &again_texts, None, "t").unwrap();
        assert_eq!(once.paragraphs, twice.paragraphs);
    }
}
