//! The nine corruption strategies that turn a well-formed essay into an
//! artificially disorganized one, plus the label inventory.
//!
//! Every strategy is a pure function of (essay, context, seed): the RNG for
//! an essay/label pair is derived from the global seed and the pair's
//! identity, so corrupting a corpus in parallel yields the same output as a
//! sequential run. A strategy that cannot apply to an essay (too few
//! sentences, no usable donor, only identity arrangements) reports a
//! [`CorruptionError`] instead of returning the input unchanged — a
//! "corrupted" copy identical to its original would poison classification
//! labels.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Essay, Paragraph, Sentence};
use crate::seeding::rng_for;
use crate::text_analysis::{find_dis_in_essay, DiLexicon, EssayDiSite};

/// Attempt cap for identity rejection and donor search.
pub const MAX_ATTEMPTS: usize = 32;

/// Class labels: the reserved original class plus nine corruption strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorruptionLabel {
    #[serde(rename = "ORIG")]
    Orig,
    /// Complete sentence shuffle (output flattened to one paragraph).
    #[serde(rename = "C_SENT")]
    CSent,
    /// Shuffle a random closed range of sentences (flattened output).
    #[serde(rename = "M_SENT")]
    MSent,
    /// Permute all discourse-indicator phrases across their slots.
    #[serde(rename = "C_DI")]
    CDi,
    /// Permute roughly half of the unique indicator phrases.
    #[serde(rename = "M_DI")]
    MDi,
    /// Complete paragraph shuffle.
    #[serde(rename = "C_PARA")]
    CPara,
    /// Shuffle a random closed range of paragraphs.
    #[serde(rename = "M_PARA")]
    MPara,
    /// Drop ~30% of paragraphs.
    #[serde(rename = "PARA_DROP")]
    ParaDrop,
    /// Replace a paragraph range with the same positions from a same-prompt donor.
    #[serde(rename = "PARA_RS")]
    ParaRs,
    /// As `ParaRs`, with the donor drawn from a different prompt.
    #[serde(rename = "PARA_RD")]
    ParaRd,
}

impl CorruptionLabel {
    pub const ALL: [CorruptionLabel; 10] = [
        CorruptionLabel::Orig,
        CorruptionLabel::CSent,
        CorruptionLabel::MSent,
        CorruptionLabel::CDi,
        CorruptionLabel::MDi,
        CorruptionLabel::CPara,
        CorruptionLabel::MPara,
        CorruptionLabel::ParaDrop,
        CorruptionLabel::ParaRs,
        CorruptionLabel::ParaRd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionLabel::Orig => "ORIG",
            CorruptionLabel::CSent => "C_SENT",
            CorruptionLabel::MSent => "M_SENT",
            CorruptionLabel::CDi => "C_DI",
            CorruptionLabel::MDi => "M_DI",
            CorruptionLabel::CPara => "C_PARA",
            CorruptionLabel::MPara => "M_PARA",
            CorruptionLabel::ParaDrop => "PARA_DROP",
            CorruptionLabel::ParaRs => "PARA_RS",
            CorruptionLabel::ParaRd => "PARA_RD",
        }
    }

    /// Case-insensitive parse accepting `-` for `_` (e.g. "c-sent").
    pub fn parse(s: &str) -> Option<Self> {
        let normalized = s.trim().to_uppercase().replace('-', "_");
        Self::ALL.into_iter().find(|l| l.name() == normalized)
    }

    pub fn is_corruption(self) -> bool {
        self != CorruptionLabel::Orig
    }

    /// True for strategies that rearrange whole paragraphs; datasets carry
    /// paragraph-boundary markers exactly when such a label is in play.
    pub fn is_paragraph_level(self) -> bool {
        matches!(
            self,
            CorruptionLabel::CPara
                | CorruptionLabel::MPara
                | CorruptionLabel::ParaDrop
                | CorruptionLabel::ParaRs
                | CorruptionLabel::ParaRd
        )
    }
}

impl std::fmt::Display for CorruptionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Donor pools and seed for corrupting one essay. Pools never contain the
/// essay being corrupted.
pub struct CorruptionContext<'a> {
    /// Essays sharing the target's prompt (donors for `ParaRs`).
    pub same_prompt_pool: Vec<&'a Essay>,
    /// Essays with a different prompt (donors for `ParaRd`).
    pub other_prompt_pool: Vec<&'a Essay>,
    /// Global seed; the per-essay RNG is derived from it with the essay id
    /// and label name.
    pub seed: u64,
}

impl<'a> CorruptionContext<'a> {
    pub fn for_essay(corpus: &'a [Essay], target: usize, seed: u64) -> Self {
        let prompt = &corpus[target].prompt_id;
        let mut same_prompt_pool = Vec::new();
        let mut other_prompt_pool = Vec::new();
        for (i, essay) in corpus.iter().enumerate() {
            if i == target {
                continue;
            }
            if essay.prompt_id == *prompt {
                same_prompt_pool.push(essay);
            } else {
                other_prompt_pool.push(essay);
            }
        }
        CorruptionContext { same_prompt_pool, other_prompt_pool, seed }
    }

    /// A context with empty donor pools, for strategies that need none.
    pub fn standalone(seed: u64) -> Self {
        CorruptionContext { same_prompt_pool: Vec::new(), other_prompt_pool: Vec::new(), seed }
    }
}

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("essay {id}: {label} needs {needed} {unit}, found {got}")]
    TooFewUnits { id: String, label: &'static str, unit: &'static str, needed: usize, got: usize },
    #[error("essay {id}: {label} found no non-identity arrangement in {attempts} attempts")]
    IdentityExhausted { id: String, label: &'static str, attempts: usize },
    #[error("essay {id}: {label} found no usable donor in {attempts} attempts")]
    NoDonor { id: String, label: &'static str, attempts: usize },
    #[error("essay {id}: ORIG denotes an uncorrupted essay and cannot be applied")]
    OrigLabel { id: String },
}

/// Bookkeeping from one corruption, for invariant checks and inspection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionTrace {
    /// Closed unit range `[i, j]` a moderate shuffle or replacement touched.
    pub range: Option<(usize, usize)>,
    /// Sorted indices a `ParaDrop` removed.
    pub dropped: Option<Vec<usize>>,
    /// Donor essay id for `ParaRs`/`ParaRd`.
    pub donor_id: Option<String>,
    /// For DI corruptions: the phrase index written into each slot.
    pub slot_phrases: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleMode {
    Complete,
    Moderate,
}

/// In-place Fisher–Yates driven by the supplied RNG.
pub(crate) fn fisher_yates<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Shuffles a copy of `items`, rejecting the identity arrangement for up to
/// [`MAX_ATTEMPTS`] tries. `None` only when every arrangement reproduces the
/// input (all items equal).
fn shuffle_non_identity<T: Clone + PartialEq, R: Rng>(items: &[T], rng: &mut R) -> Option<Vec<T>> {
    for _ in 0..MAX_ATTEMPTS {
        let mut shuffled = items.to_vec();
        fisher_yates(&mut shuffled, rng);
        if shuffled[..] != items[..] {
            return Some(shuffled);
        }
    }
    None
}

/// Uniform unordered pair 0 <= i < j < n, returned sorted.
fn pick_pair<R: Rng>(n: usize, rng: &mut R) -> (usize, usize) {
    debug_assert!(n >= 2);
    loop {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            return (a.min(b), a.max(b));
        }
    }
}

/// Uniform k-subset of 0..n via partial Fisher–Yates, returned sorted.
pub(crate) fn choose_indices<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// New essay with the same identity fields and a single paragraph holding
/// `sentences`. Sentence- and indicator-level corruptions discard paragraph
/// boundaries, so their outputs are single-paragraph documents.
fn single_paragraph_essay(base: &Essay, sentences: Vec<Sentence>) -> Essay {
    Essay {
        id: base.id.clone(),
        prompt_id: base.prompt_id.clone(),
        paragraphs: vec![Paragraph::new(sentences)],
        gold_score: base.gold_score,
        source: base.source.clone(),
    }
}

fn with_paragraphs(base: &Essay, paragraphs: Vec<Paragraph>) -> Essay {
    Essay {
        id: base.id.clone(),
        prompt_id: base.prompt_id.clone(),
        paragraphs,
        gold_score: base.gold_score,
        source: base.source.clone(),
    }
}

/// Sentence shuffle. Complete: non-identity Fisher–Yates of the flat
/// sentence list. Moderate: same on a uniformly chosen closed range
/// `[i..=j]`, everything outside untouched. Output is single-paragraph.
pub fn corrupt_sentences<R: Rng>(
    essay: &Essay,
    mode: ShuffleMode,
    rng: &mut R,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let label = match mode {
        ShuffleMode::Complete => "C_SENT",
        ShuffleMode::Moderate => "M_SENT",
    };
    let flat = essay.flat_sentences();
    let n = flat.len();
    let needed = match mode {
        ShuffleMode::Complete => 2,
        // A proper sub-range needs at least one sentence left out.
        ShuffleMode::Moderate => 3,
    };
    if n < needed {
        return Err(CorruptionError::TooFewUnits {
            id: essay.id.clone(),
            label,
            unit: "sentences",
            needed,
            got: n,
        });
    }
    let (shuffled, range) = match mode {
        ShuffleMode::Complete => {
            let shuffled = shuffle_non_identity(&flat, rng).ok_or_else(|| {
                CorruptionError::IdentityExhausted {
                    id: essay.id.clone(),
                    label,
                    attempts: MAX_ATTEMPTS,
                }
            })?;
            (shuffled, None)
        }
        ShuffleMode::Moderate => {
            let (i, j) = pick_pair(n, rng);
            let sub = shuffle_non_identity(&flat[i..=j], rng).ok_or_else(|| {
                CorruptionError::IdentityExhausted {
                    id: essay.id.clone(),
                    label,
                    attempts: MAX_ATTEMPTS,
                }
            })?;
            let mut out = flat.clone();
            out[i..=j].clone_from_slice(&sub);
            (out, Some((i, j)))
        }
    };
    Ok((
        single_paragraph_essay(essay, shuffled),
        CorruptionTrace { range, ..CorruptionTrace::default() },
    ))
}

/// Discourse-indicator corruption: slot positions stay fixed; phrase
/// contents permute across slots. Complete permutes every slot; moderate
/// selects `max(2, ceil(U/2))` of the `U` unique phrases and permutes only
/// slots carrying a selected phrase. Non-indicator tokens are untouched;
/// output is single-paragraph.
///
/// The selection size deviates from a bare `ceil(U/2)` at `U = 2`: one
/// selected phrase can never produce a changed assignment, so the floor of
/// two keeps the documented precondition (two unique phrases suffice) true.
pub fn corrupt_dis<R: Rng>(
    essay: &Essay,
    sites: &[EssayDiSite],
    lexicon: &DiLexicon,
    mode: ShuffleMode,
    rng: &mut R,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let label = match mode {
        ShuffleMode::Complete => "C_DI",
        ShuffleMode::Moderate => "M_DI",
    };
    let slot_phrases: Vec<usize> = sites.iter().map(|s| s.occ.phrase).collect();
    let unique: BTreeSet<usize> = slot_phrases.iter().copied().collect();
    let identity_err = |id: &str| CorruptionError::IdentityExhausted {
        id: id.to_owned(),
        label,
        attempts: MAX_ATTEMPTS,
    };
    let new_phrases: Vec<usize> = match mode {
        ShuffleMode::Complete => {
            if slot_phrases.len() < 2 {
                return Err(CorruptionError::TooFewUnits {
                    id: essay.id.clone(),
                    label,
                    unit: "indicator occurrences",
                    needed: 2,
                    got: slot_phrases.len(),
                });
            }
            if unique.len() < 2 {
                return Err(CorruptionError::TooFewUnits {
                    id: essay.id.clone(),
                    label,
                    unit: "distinct indicator phrases",
                    needed: 2,
                    got: unique.len(),
                });
            }
            shuffle_non_identity(&slot_phrases, rng).ok_or_else(|| identity_err(&essay.id))?
        }
        ShuffleMode::Moderate => {
            let u = unique.len();
            if u < 2 {
                return Err(CorruptionError::TooFewUnits {
                    id: essay.id.clone(),
                    label,
                    unit: "distinct indicator phrases",
                    needed: 2,
                    got: u,
                });
            }
            let k = (u.div_ceil(2)).max(2);
            let unique_vec: Vec<usize> = unique.iter().copied().collect();
            let selected: BTreeSet<usize> =
                choose_indices(u, k, rng).into_iter().map(|i| unique_vec[i]).collect();
            let positions: Vec<usize> = (0..slot_phrases.len())
                .filter(|&s| selected.contains(&slot_phrases[s]))
                .collect();
            let contents: Vec<usize> = positions.iter().map(|&p| slot_phrases[p]).collect();
            let new_contents =
                shuffle_non_identity(&contents, rng).ok_or_else(|| identity_err(&essay.id))?;
            let mut out = slot_phrases.clone();
            for (&pos, &phrase) in positions.iter().zip(&new_contents) {
                out[pos] = phrase;
            }
            out
        }
    };

    // Rewrite each sentence, substituting new phrase tokens into the slots.
    let mut rebuilt: Vec<Sentence> = Vec::new();
    let mut site_cursor = 0usize;
    for (pi, para) in essay.paragraphs.iter().enumerate() {
        for (si, sent) in para.sentences.iter().enumerate() {
            let begin = site_cursor;
            while site_cursor < sites.len()
                && sites[site_cursor].paragraph == pi
                && sites[site_cursor].sentence == si
            {
                site_cursor += 1;
            }
            if begin == site_cursor {
                rebuilt.push(sent.clone());
                continue;
            }
            let mut tokens: Vec<String> = Vec::with_capacity(sent.tokens.len());
            let mut tok_cursor = 0usize;
            for slot in begin..site_cursor {
                let occ = sites[slot].occ;
                tokens.extend_from_slice(&sent.tokens[tok_cursor..occ.start]);
                tokens.extend(lexicon.phrases()[new_phrases[slot]].iter().cloned());
                tok_cursor = occ.start + occ.len;
            }
            tokens.extend_from_slice(&sent.tokens[tok_cursor..]);
            rebuilt.push(Sentence { tokens });
        }
    }
    Ok((
        single_paragraph_essay(essay, rebuilt),
        CorruptionTrace { slot_phrases: Some(new_phrases), ..CorruptionTrace::default() },
    ))
}

/// Paragraph shuffle; paragraph structure is kept. Complete: non-identity
/// Fisher–Yates of all paragraphs. Moderate: same on a uniformly chosen
/// closed range.
pub fn corrupt_paragraph_shuffle<R: Rng>(
    essay: &Essay,
    mode: ShuffleMode,
    rng: &mut R,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let label = match mode {
        ShuffleMode::Complete => "C_PARA",
        ShuffleMode::Moderate => "M_PARA",
    };
    let m = essay.paragraphs.len();
    let needed = match mode {
        ShuffleMode::Complete => 2,
        ShuffleMode::Moderate => 3,
    };
    if m < needed {
        return Err(CorruptionError::TooFewUnits {
            id: essay.id.clone(),
            label,
            unit: "paragraphs",
            needed,
            got: m,
        });
    }
    let identity_err = |id: &str| CorruptionError::IdentityExhausted {
        id: id.to_owned(),
        label,
        attempts: MAX_ATTEMPTS,
    };
    match mode {
        ShuffleMode::Complete => {
            let shuffled = shuffle_non_identity(&essay.paragraphs, rng)
                .ok_or_else(|| identity_err(&essay.id))?;
            Ok((with_paragraphs(essay, shuffled), CorruptionTrace::default()))
        }
        ShuffleMode::Moderate => {
            let (i, j) = pick_pair(m, rng);
            let sub = shuffle_non_identity(&essay.paragraphs[i..=j], rng)
                .ok_or_else(|| identity_err(&essay.id))?;
            let mut paragraphs = essay.paragraphs.clone();
            paragraphs[i..=j].clone_from_slice(&sub);
            Ok((
                with_paragraphs(essay, paragraphs),
                CorruptionTrace { range: Some((i, j)), ..CorruptionTrace::default() },
            ))
        }
    }
}

/// Number of paragraphs `ParaDrop` removes from an `m`-paragraph essay:
/// max(1, round-half-up(0.3·m)), clamped so at least one paragraph stays.
/// Integer arithmetic — round-half-up(3m/10) = (3m + 5) / 10 — keeps the
/// half-up rule exact where floating point would misround.
pub fn para_drop_count(m: usize) -> usize {
    debug_assert!(m >= 2);
    ((3 * m + 5) / 10).clamp(1, m - 1)
}

/// Drops ~30% of paragraphs, survivors keeping their relative order.
pub fn corrupt_paragraph_drop<R: Rng>(
    essay: &Essay,
    rng: &mut R,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let m = essay.paragraphs.len();
    if m < 2 {
        return Err(CorruptionError::TooFewUnits {
            id: essay.id.clone(),
            label: "PARA_DROP",
            unit: "paragraphs",
            needed: 2,
            got: m,
        });
    }
    let k = para_drop_count(m);
    let dropped = choose_indices(m, k, rng);
    let paragraphs: Vec<Paragraph> = essay
        .paragraphs
        .iter()
        .enumerate()
        .filter(|(i, _)| dropped.binary_search(i).is_err())
        .map(|(_, p)| p.clone())
        .collect();
    Ok((
        with_paragraphs(essay, paragraphs),
        CorruptionTrace { dropped: Some(dropped), ..CorruptionTrace::default() },
    ))
}

/// Replaces a uniformly chosen closed paragraph range `[i..=j]` with the
/// same positions of a donor drawn uniformly from `pool`. Donors are
/// retried (up to [`MAX_ATTEMPTS`]) until one both reaches position `j` and
/// differs from the recipient over the range — a replacement that changes
/// nothing would not be a corruption.
pub fn corrupt_paragraph_replace<R: Rng>(
    essay: &Essay,
    pool: &[&Essay],
    label: &'static str,
    rng: &mut R,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let m = essay.paragraphs.len();
    if m < 2 {
        return Err(CorruptionError::TooFewUnits {
            id: essay.id.clone(),
            label,
            unit: "paragraphs",
            needed: 2,
            got: m,
        });
    }
    if pool.is_empty() {
        return Err(CorruptionError::NoDonor { id: essay.id.clone(), label, attempts: 0 });
    }
    let (i, j) = pick_pair(m, rng);
    for _ in 0..MAX_ATTEMPTS {
        let donor = pool[rng.gen_range(0..pool.len())];
        if donor.paragraphs.len() < j + 1 {
            continue;
        }
        if donor.paragraphs[i..=j] == essay.paragraphs[i..=j] {
            continue;
        }
        let mut paragraphs = essay.paragraphs.clone();
        paragraphs[i..=j].clone_from_slice(&donor.paragraphs[i..=j]);
        return Ok((
            with_paragraphs(essay, paragraphs),
            CorruptionTrace {
                range: Some((i, j)),
                donor_id: Some(donor.id.clone()),
                ..CorruptionTrace::default()
            },
        ));
    }
    Err(CorruptionError::NoDonor { id: essay.id.clone(), label, attempts: MAX_ATTEMPTS })
}

/// Applies `label` to `essay` and returns the output with its trace. The
/// RNG is derived from (context seed, essay id, label name), so results do
/// not depend on processing order or thread count.
pub fn corrupt_detailed(
    essay: &Essay,
    label: CorruptionLabel,
    lexicon: &DiLexicon,
    ctx: &CorruptionContext<'_>,
) -> Result<(Essay, CorruptionTrace), CorruptionError> {
    let mut rng = rng_for(ctx.seed, &[&essay.id, label.name()]);
    match label {
        CorruptionLabel::Orig => Err(CorruptionError::OrigLabel { id: essay.id.clone() }),
        CorruptionLabel::CSent => corrupt_sentences(essay, ShuffleMode::Complete, &mut rng),
        CorruptionLabel::MSent => corrupt_sentences(essay, ShuffleMode::Moderate, &mut rng),
        CorruptionLabel::CDi => {
            let sites = find_dis_in_essay(essay, lexicon);
            corrupt_dis(essay, &sites, lexicon, ShuffleMode::Complete, &mut rng)
        }
        CorruptionLabel::MDi => {
            let sites = find_dis_in_essay(essay, lexicon);
            corrupt_dis(essay, &sites, lexicon, ShuffleMode::Moderate, &mut rng)
        }
        CorruptionLabel::CPara => corrupt_paragraph_shuffle(essay, ShuffleMode::Complete, &mut rng),
        CorruptionLabel::MPara => corrupt_paragraph_shuffle(essay, ShuffleMode::Moderate, &mut rng),
        CorruptionLabel::ParaDrop => corrupt_paragraph_drop(essay, &mut rng),
        CorruptionLabel::ParaRs => {
            corrupt_paragraph_replace(essay, &ctx.same_prompt_pool, "PARA_RS", &mut rng)
        }
        CorruptionLabel::ParaRd => {
            corrupt_paragraph_replace(essay, &ctx.other_prompt_pool, "PARA_RD", &mut rng)
        }
    }
}

/// [`corrupt_detailed`] without the trace.
pub fn corrupt(
    essay: &Essay,
    label: CorruptionLabel,
    lexicon: &DiLexicon,
    ctx: &CorruptionContext<'_>,
) -> Result<Essay, CorruptionError> {
    corrupt_detailed(essay, label, lexicon, ctx).map(|(essay, _)| essay)
}

/// Result of corrupting a whole corpus with one strategy.
pub struct CorruptedCorpus {
    /// Successful outputs, in input corpus order.
    pub essays: Vec<Essay>,
    /// Essays the strategy could not apply to: (id, reason).
    pub skipped: Vec<(String, String)>,
}

/// Applies one strategy to every essay, in parallel. Output order and
/// content are independent of thread count because each essay's RNG is
/// derived from its id.
pub fn corrupt_corpus(
    corpus: &[Essay],
    label: CorruptionLabel,
    lexicon: &DiLexicon,
    seed: u64,
) -> CorruptedCorpus {
    use rayon::prelude::*;
    let results: Vec<Result<Essay, CorruptionError>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let ctx = CorruptionContext::for_essay(corpus, i, seed);
            corrupt(&corpus[i], label, lexicon, &ctx)
        })
        .collect();
    let mut essays = Vec::new();
    let mut skipped = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(essay) => essays.push(essay),
            Err(e) => skipped.push((corpus[i].id.clone(), e.to_string())),
        }
    }
    CorruptedCorpus { essays, skipped }
}
