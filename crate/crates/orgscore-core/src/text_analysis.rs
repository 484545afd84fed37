//! Sentence segmentation, tokenization, discourse-indicator (DI) matching,
//! and paragraph function labeling.
//!
//! All operations are pure functions over borrowed data; the only state is
//! the loaded [`DiLexicon`] / [`RebuttalMarkers`], both immutable after
//! construction.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{Essay, ParagraphLabel};

const TERMINATORS: [char; 3] = ['.', '!', '?'];

/// Words whose trailing period does not end a sentence.
const ABBREVIATIONS: [&str; 5] = ["e.g.", "i.e.", "mr.", "dr.", "etc."];

/// Splits text into sentences on `.`, `!`, or `?` followed by whitespace or
/// end of input, keeping the terminator with its sentence.
///
/// A period is suppressed as a boundary when the non-whitespace run ending
/// at it — leading punctuation stripped, lowercased — is a known
/// abbreviation (`e.g.`, `i.e.`, `mr.`, `dr.`, `etc.`). Text with no final
/// terminator still yields its trailing chunk as a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        let at_boundary = match iter.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if !at_boundary {
            continue;
        }
        let end = i + c.len_utf8();
        if c == '.' && is_abbreviation(&text[start..end]) {
            continue;
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_owned());
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_owned());
    }
    sentences
}

/// True when the non-whitespace run ending at the end of `prefix` is an
/// abbreviation. Leading punctuation (quotes, parens) is stripped before
/// the case-insensitive comparison.
fn is_abbreviation(prefix: &str) -> bool {
    let run = match prefix.char_indices().rev().find(|&(_, c)| c.is_whitespace()) {
        Some((i, c)) => &prefix[i + c.len_utf8()..],
        None => prefix,
    };
    let word = match run.char_indices().find(|&(_, c)| c.is_alphanumeric()) {
        Some((i, _)) => &run[i..],
        None => return false,
    };
    let lowered = word.to_lowercase();
    ABBREVIATIONS.contains(&lowered.as_str())
}

/// Lowercasing tokenizer: maximal alphanumeric runs are word tokens; every
/// non-alphanumeric, non-whitespace character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                let mut tok = String::new();
                tok.extend(c.to_lowercase());
                tokens.push(tok);
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: phrase has no tokens")]
    EmptyPhrase { line: usize },
    #[error("line {line}: bare \"and\" is not accepted as an indicator phrase")]
    BareAnd { line: usize },
    #[error("line {line}: duplicate phrase \"{phrase}\"")]
    DuplicatePhrase { line: usize, phrase: String },
    #[error("lexicon contains no phrases")]
    Empty,
}

/// A set of discourse-indicator phrases, indexed for greedy matching.
///
/// Phrases are stored tokenized and sorted, so indices are stable across
/// loads of the same file. The loader rejects the bare conjunction "and"
/// (far too frequent to mark discourse structure) and duplicate phrases.
#[derive(Debug, Clone)]
pub struct DiLexicon {
    phrases: Vec<Vec<String>>,
    /// phrase indices keyed by first token, longest phrase first.
    by_first: HashMap<String, Vec<usize>>,
}

impl DiLexicon {
    /// Parses one phrase per line; blank lines and `#` comments are skipped.
    pub fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Self, LexiconError> {
        let mut tokenized: Vec<Vec<String>> = Vec::new();
        for (idx, raw) in lines.enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens = tokenize(line);
            if tokens.is_empty() {
                return Err(LexiconError::EmptyPhrase { line: line_no });
            }
            if tokens.len() == 1 && tokens[0] == "and" {
                return Err(LexiconError::BareAnd { line: line_no });
            }
            if tokenized.contains(&tokens) {
                return Err(LexiconError::DuplicatePhrase { line: line_no, phrase: tokens.join(" ") });
            }
            tokenized.push(tokens);
        }
        if tokenized.is_empty() {
            return Err(LexiconError::Empty);
        }
        tokenized.sort();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, phrase) in tokenized.iter().enumerate() {
            by_first.entry(phrase[0].clone()).or_default().push(i);
        }
        for bucket in by_first.values_mut() {
            bucket.sort_by(|&a, &b| {
                tokenized[b].len().cmp(&tokenized[a].len()).then_with(|| tokenized[a].cmp(&tokenized[b]))
            });
        }
        Ok(DiLexicon { phrases: tokenized, by_first })
    }

    pub fn from_path(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path)
            .map_err(|source| LexiconError::Io { path: path.into(), source })?;
        Self::from_lines(text.lines())
    }

    /// The lexicon bundled with the crate (`data/di_lexicon.txt`).
    pub fn bundled() -> Self {
        Self::from_lines(include_str!("../data/di_lexicon.txt").lines())
            .expect("bundled lexicon is valid")
    }

    pub fn phrases(&self) -> &[Vec<String>] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// One matched indicator phrase inside a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiOccurrence {
    /// Index into [`DiLexicon::phrases`].
    pub phrase: usize,
    /// Token offset of the match within the sentence.
    pub start: usize,
    /// Match length in tokens.
    pub len: usize,
}

/// Greedy leftmost-longest phrase matching over one sentence.
///
/// Scanning left to right, the longest lexicon phrase starting at the
/// current token (if any) is taken and the scan resumes after it, so
/// matches never overlap.
pub fn find_dis(tokens: &[String], lexicon: &DiLexicon) -> Vec<DiOccurrence> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut advanced = false;
        if let Some(candidates) = lexicon.by_first.get(tokens[i].as_str()) {
            for &p in candidates {
                let phrase = &lexicon.phrases[p];
                if i + phrase.len() <= tokens.len() && tokens[i..i + phrase.len()] == phrase[..] {
                    out.push(DiOccurrence { phrase: p, start: i, len: phrase.len() });
                    i += phrase.len();
                    advanced = true;
                    break;
                }
            }
        }
        if !advanced {
            i += 1;
        }
    }
    out
}

/// A DI occurrence located within an essay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EssayDiSite {
    pub paragraph: usize,
    pub sentence: usize,
    pub occ: DiOccurrence,
}

/// All DI occurrences in an essay, ordered by (paragraph, sentence, start).
pub fn find_dis_in_essay(essay: &Essay, lexicon: &DiLexicon) -> Vec<EssayDiSite> {
    let mut sites = Vec::new();
    for (pi, para) in essay.paragraphs.iter().enumerate() {
        for (si, sent) in para.sentences.iter().enumerate() {
            for occ in find_dis(&sent.tokens, lexicon) {
                sites.push(EssayDiSite { paragraph: pi, sentence: si, occ });
            }
        }
    }
    sites
}

/// Token sequences that mark an interior paragraph as a rebuttal.
#[derive(Debug, Clone)]
pub struct RebuttalMarkers {
    markers: Vec<Vec<String>>,
}

impl RebuttalMarkers {
    pub fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Self {
        let markers = lines
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(tokenize)
            .filter(|t| !t.is_empty())
            .collect();
        RebuttalMarkers { markers }
    }

    /// The marker set bundled with the crate (`data/rebuttal_markers.txt`).
    pub fn bundled() -> Self {
        Self::from_lines(include_str!("../data/rebuttal_markers.txt").lines())
    }

    pub fn markers(&self) -> &[Vec<String>] {
        &self.markers
    }
}

impl Default for RebuttalMarkers {
    fn default() -> Self {
        Self::bundled()
    }
}

fn contains_contiguous(tokens: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && tokens.windows(needle.len()).any(|w| w == needle)
}

/// Assigns a function label to each paragraph by position:
/// first paragraph `I`, last paragraph `C` (when there are at least two),
/// interior paragraphs `R` when their first sentence contains a rebuttal
/// marker, otherwise `B`. A one-paragraph essay is labeled `[I]`.
pub fn label_paragraphs(essay: &Essay, markers: &RebuttalMarkers) -> Vec<ParagraphLabel> {
    let m = essay.paragraphs.len();
    (0..m)
        .map(|i| {
            if i == 0 {
                ParagraphLabel::I
            } else if i == m - 1 {
                ParagraphLabel::C
            } else {
                let first = &essay.paragraphs[i].sentences[0];
                let rebuts =
                    markers.markers.iter().any(|mk| contains_contiguous(&first.tokens, mk));
                if rebuts {
                    ParagraphLabel::R
                } else {
                    ParagraphLabel::B
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_essay;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn splits_on_terminator_plus_space() {
        assert_eq!(split_sentences("A b. C d."), vec!["A b.", "C d."]);
        assert_eq!(split_sentences("One! Two? Three."), vec!["One!", "Two?", "Three."]);
    }

    #[test]
    fn keeps_abbreviations_inside_sentence() {
        assert_eq!(
            split_sentences("He cited e.g. apples. Then left."),
            vec!["He cited e.g. apples.", "Then left."]
        );
        assert_eq!(split_sentences("Mr. Smith arrived."), vec!["Mr. Smith arrived."]);
        assert_eq!(split_sentences("Ask Dr. Lee. Go now."), vec!["Ask Dr. Lee.", "Go now."]);
        assert_eq!(
            split_sentences("Fruit, i.e. apples, is good. Yes."),
            vec!["Fruit, i.e. apples, is good.", "Yes."]
        );
        assert_eq!(split_sentences("Pears, apples, etc. are fruit."), vec![
            "Pears, apples, etc. are fruit."
        ]);
    }

    #[test]
    fn abbreviation_check_strips_leading_punctuation() {
        assert_eq!(
            split_sentences("She wrote (e.g. this) well. Done."),
            // "e.g." followed by space sits inside the parenthetical; the
            // run ending at the period is "(e.g." -> stripped to "e.g."
            vec!["She wrote (e.g. this) well.", "Done."]
        );
    }

    #[test]
    fn consecutive_terminators_split_after_the_last() {
        assert_eq!(split_sentences("Really?! Yes."), vec!["Really?!", "Yes."]);
    }

    #[test]
    fn trailing_text_without_terminator_is_a_sentence() {
        assert_eq!(split_sentences("Done. unfinished thought"), vec![
            "Done.",
            "unfinished thought"
        ]);
        assert_eq!(split_sentences("no terminator at all"), vec!["no terminator at all"]);
    }

    #[test]
    fn empty_and_blank_inputs_yield_nothing() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("  \t ").is_empty());
    }

    #[test]
    fn tokenize_lowercases_and_isolates_punctuation() {
        assert_eq!(tokenize("Don't stop."), toks(&["don", "'", "t", "stop", "."]));
        assert_eq!(tokenize("A-B c99"), toks(&["a", "-", "b", "c99"]));
        assert_eq!(tokenize("  spaced   out  "), toks(&["spaced", "out"]));
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn lexicon_rejects_bare_and() {
        let err = DiLexicon::from_lines(["first of all", "and"].into_iter()).unwrap_err();
        assert!(matches!(err, LexiconError::BareAnd { line: 2 }));
        // "and" inside a longer phrase is fine.
        assert!(DiLexicon::from_lines(["and then"].into_iter()).is_ok());
    }

    #[test]
    fn lexicon_rejects_duplicates_even_with_different_spacing() {
        let err =
            DiLexicon::from_lines(["first of all", "first  of all"].into_iter()).unwrap_err();
        assert!(matches!(err, LexiconError::DuplicatePhrase { line: 2, .. }));
    }

    #[test]
    fn lexicon_skips_comments_and_blank_lines() {
        let lex =
            DiLexicon::from_lines(["# header", "", "however", "in addition"].into_iter()).unwrap();
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn bundled_lexicon_loads_and_has_core_phrases() {
        let lex = DiLexicon::bundled();
        assert!(lex.len() >= 150, "bundled lexicon has {} phrases", lex.len());
        for needed in ["first of all", "in conclusion", "on the other hand", "however"] {
            let tokens = tokenize(needed);
            assert!(lex.phrases().iter().any(|p| *p == tokens), "missing phrase: {needed}");
        }
    }

    #[test]
    fn matching_is_leftmost_longest_and_non_overlapping() {
        let lex = DiLexicon::from_lines(["first", "first of all", "of", "all in all"].into_iter())
            .unwrap();
        let sent = toks(&["first", "of", "all", ",", "we", "agree", "."]);
        let hits = find_dis(&sent, &lex);
        assert_eq!(hits.len(), 1);
        let hit = hits[0];
        assert_eq!((hit.start, hit.len), (0, 3));
        assert_eq!(lex.phrases()[hit.phrase], toks(&["first", "of", "all"]));
    }

    #[test]
    fn matching_resumes_after_each_match() {
        let lex = DiLexicon::from_lines(["so", "so far"].into_iter()).unwrap();
        let sent = toks(&["so", "far", "so", "good"]);
        let hits = find_dis(&sent, &lex);
        // "so far" consumes the first two tokens, then "so" matches alone.
        assert_eq!(
            hits.iter().map(|h| (h.start, h.len)).collect::<Vec<_>>(),
            vec![(0, 2), (2, 1)]
        );
    }

    #[test]
    fn matcher_agrees_with_bruteforce_on_small_cases() {
        let lex = DiLexicon::from_lines(
            ["a b", "a b c", "b c", "c", "x y"].into_iter(),
        )
        .unwrap();
        let cases: Vec<Vec<String>> = vec![
            toks(&["a", "b", "c", "d"]),
            toks(&["b", "c", "a", "b"]),
            toks(&["x", "y", "x", "c"]),
            toks(&["d", "d", "d"]),
            toks(&[]),
        ];
        for tokens in cases {
            assert_eq!(find_dis(&tokens, &lex), bruteforce_dis(&tokens, &lex), "on {tokens:?}");
        }
    }

    /// Reference matcher: at each position try every phrase, keep the longest.
    fn bruteforce_dis(tokens: &[String], lexicon: &DiLexicon) -> Vec<DiOccurrence> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut best: Option<DiOccurrence> = None;
            for (p, phrase) in lexicon.phrases().iter().enumerate() {
                if i + phrase.len() <= tokens.len() && tokens[i..i + phrase.len()] == phrase[..] {
                    let better = match best {
                        None => true,
                        Some(b) => phrase.len() > b.len,
                    };
                    if better {
                        best = Some(DiOccurrence { phrase: p, start: i, len: phrase.len() });
                    }
                }
            }
            match best {
                Some(occ) => {
                    out.push(occ);
                    i += occ.len;
                }
                None => i += 1,
            }
        }
        out
    }

    fn essay_from(texts: &[&str]) -> Essay {
        let owned: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
        build_essay("t".into(), "p".into(), &owned, None, "test").unwrap()
    }

    #[test]
    fn single_paragraph_is_introduction() {
        let e = essay_from(&["Only one paragraph here."]);
        assert_eq!(label_paragraphs(&e, &RebuttalMarkers::bundled()), vec![ParagraphLabel::I]);
    }

    #[test]
    fn two_paragraphs_are_intro_and_conclusion() {
        let e = essay_from(&["Opening words.", "Closing words."]);
        assert_eq!(
            label_paragraphs(&e, &RebuttalMarkers::bundled()),
            vec![ParagraphLabel::I, ParagraphLabel::C]
        );
    }

    #[test]
    fn interior_paragraphs_split_into_body_and_rebuttal() {
        let e = essay_from(&[
            "The opening paragraph.",
            "Evidence supports the claim.",
            "Some may argue the opposite view. They are mistaken.",
            "However late in paragraph.",
            "Finishing up.",
        ]);
        let labels = label_paragraphs(&e, &RebuttalMarkers::bundled());
        assert_eq!(labels, vec![
            ParagraphLabel::I,
            ParagraphLabel::B,
            ParagraphLabel::R,
            ParagraphLabel::R,
            ParagraphLabel::C,
        ]);
    }

    #[test]
    fn marker_outside_first_sentence_does_not_rebut() {
        let e = essay_from(&[
            "Opening.",
            "The claim stands. However some disagree.",
            "Closing.",
        ]);
        let labels = label_paragraphs(&e, &RebuttalMarkers::bundled());
        assert_eq!(labels[1], ParagraphLabel::B);
    }

    #[test]
    fn find_dis_in_essay_orders_sites() {
        let lex = DiLexicon::from_lines(["however", "in addition"].into_iter()).unwrap();
        let e = essay_from(&[
            "In addition we start. However we continue.",
            "However the end.",
        ]);
        let sites = find_dis_in_essay(&e, &lex);
        let coords: Vec<(usize, usize, usize)> =
            sites.iter().map(|s| (s.paragraph, s.sentence, s.occ.start)).collect();
        assert_eq!(coords, vec![(0, 0, 0), (0, 1, 0), (1, 0, 0)]);
    }
}
