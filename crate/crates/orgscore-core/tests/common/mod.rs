//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use orgscore_core::corpus::{Essay, Paragraph, Sentence};
use orgscore_core::corruption::{
    corrupt_detailed, para_drop_count, CorruptionContext, CorruptionError, CorruptionLabel,
    CorruptionTrace,
};
use orgscore_core::dataset::{generate_synthetic_corpus, QualityKnob, SynthConfig};
use orgscore_core::text_analysis::{find_dis_in_essay, DiLexicon, EssayDiSite};

pub fn synth_corpus(
    n_essays: usize,
    n_prompts: usize,
    paragraphs_min: usize,
    paragraphs_max: usize,
    quality: Option<QualityKnob>,
    seed: u64,
) -> Vec<Essay> {
    generate_synthetic_corpus(&SynthConfig {
        n_essays,
        n_prompts,
        paragraphs_min,
        paragraphs_max,
        quality,
        seed,
    })
    .expect("valid synthetic config")
}

/// Builds an essay directly from token lists (one inner slice per
/// sentence, one outer slice per paragraph).
pub fn essay_from_tokens(id: &str, prompt_id: &str, paragraphs: &[&[&[&str]]]) -> Essay {
    Essay {
        id: id.to_owned(),
        prompt_id: prompt_id.to_owned(),
        paragraphs: paragraphs
            .iter()
            .map(|sentences| {
                Paragraph::new(
                    sentences
                        .iter()
                        .map(|tokens| Sentence {
                            tokens: tokens.iter().map(|t| (*t).to_owned()).collect(),
                        })
                        .collect(),
                )
            })
            .collect(),
        gold_score: None,
        source: "test".to_owned(),
    }
}

pub fn token_multiset(essay: &Essay) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for para in &essay.paragraphs {
        for tok in para.tokens() {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

pub fn flat_tokens(essay: &Essay) -> Vec<String> {
    essay
        .paragraphs
        .iter()
        .flat_map(|p| p.tokens().map(str::to_owned))
        .collect()
}

/// Every corruption strategy, in documentation order.
pub const ALL_STRATEGIES: [CorruptionLabel; 9] = [
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

#[derive(Debug, Default)]
pub struct CorruptionStats {
    pub applied: usize,
    pub skipped: usize,
}

/// Applies `label` to every essay and asserts the full invariant set on
/// each success: identity metadata preserved, output differs from the
/// input, token multisets preserved where the strategy is a rearrangement,
/// moderate variants untouched outside their reported range, drop counts
/// matching the formula, and DI corruptions leaving non-indicator tokens
/// byte-identical. Failures must be legitimate not-corruptible errors.
pub fn check_corruption_invariants(
    corpus: &[Essay],
    label: CorruptionLabel,
    lexicon: &DiLexicon,
    seed: u64,
) -> CorruptionStats {
    let mut stats = CorruptionStats::default();
    for (i, essay) in corpus.iter().enumerate() {
        let ctx = CorruptionContext::for_essay(corpus, i, seed);
        match corrupt_detailed(essay, label, lexicon, &ctx) {
            Ok((corrupted, trace)) => {
                stats.applied += 1;
                assert_corruption_invariants(corpus, essay, &corrupted, &trace, label, lexicon);
            }
            Err(e) => {
                stats.skipped += 1;
                assert!(
                    matches!(
                        e,
                        CorruptionError::TooFewUnits { .. }
                            | CorruptionError::IdentityExhausted { .. }
                            | CorruptionError::NoDonor { .. }
                    ),
                    "{}: unexpected error kind: {e}",
                    essay.id
                );
            }
        }
    }
    stats
}

pub fn assert_corruption_invariants(
    corpus: &[Essay],
    original: &Essay,
    corrupted: &Essay,
    trace: &CorruptionTrace,
    label: CorruptionLabel,
    lexicon: &DiLexicon,
) {
    use CorruptionLabel::*;
    let id = &original.id;

    // Metadata is never touched.
    assert_eq!(corrupted.id, original.id);
    assert_eq!(corrupted.prompt_id, original.prompt_id);
    assert_eq!(corrupted.gold_score, original.gold_score);

    // A corruption must change the document.
    assert_ne!(
        corrupted.paragraphs, original.paragraphs,
        "{id}: {label} returned the input unchanged"
    );

    // Pure rearrangements preserve the token multiset.
    if matches!(label, CSent | MSent | CDi | MDi | CPara | MPara) {
        assert_eq!(
            token_multiset(corrupted),
            token_multiset(original),
            "{id}: {label} changed the token multiset"
        );
    }

    match label {
        Orig => unreachable!("ORIG cannot be applied"),
        CSent => {
            // Paragraph structure collapses to a single paragraph; the
            // sentence multiset is preserved.
            assert_eq!(corrupted.paragraphs.len(), 1, "{id}: C_SENT output not flat");
            let mut got = corrupted.paragraphs[0].sentences.clone();
            let mut want = original.flat_sentences();
            assert_eq!(got.len(), want.len());
            got.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            want.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            assert_eq!(got, want, "{id}: C_SENT changed the sentence multiset");
        }
        MSent => {
            assert_eq!(corrupted.paragraphs.len(), 1, "{id}: M_SENT output not flat");
            let got = &corrupted.paragraphs[0].sentences;
            let want = original.flat_sentences();
            assert_eq!(got.len(), want.len());
            let (lo, hi) = trace.range.expect("moderate shuffle reports its range");
            assert!(lo < hi && hi < want.len(), "{id}: bad range [{lo}, {hi}]");
            for (k, (g, w)) in got.iter().zip(&want).enumerate() {
                if k < lo || k > hi {
                    assert_eq!(g, w, "{id}: M_SENT touched sentence {k} outside [{lo}, {hi}]");
                }
            }
            let mut got_in: Vec<_> = got[lo..=hi].to_vec();
            let mut want_in: Vec<_> = want[lo..=hi].to_vec();
            got_in.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            want_in.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            assert_eq!(got_in, want_in, "{id}: M_SENT range is not a permutation");
        }
        CDi | MDi => {
            assert_di_rewrite(original, corrupted, trace, lexicon, label);
        }
        CPara => {
            let mut got = corrupted.paragraphs.clone();
            let mut want = original.paragraphs.clone();
            assert_eq!(got.len(), want.len(), "{id}: C_PARA changed the paragraph count");
            let key = |p: &Paragraph| p.text();
            got.sort_by_key(key);
            want.sort_by_key(key);
            assert_eq!(got, want, "{id}: C_PARA is not a paragraph permutation");
        }
        MPara => {
            assert_eq!(corrupted.paragraphs.len(), original.paragraphs.len());
            let (lo, hi) = trace.range.expect("moderate shuffle reports its range");
            for (k, (g, w)) in
                corrupted.paragraphs.iter().zip(&original.paragraphs).enumerate()
            {
                if k < lo || k > hi {
                    assert_eq!(g, w, "{id}: M_PARA touched paragraph {k} outside [{lo}, {hi}]");
                }
            }
            let key = |p: &Paragraph| p.text();
            let mut got: Vec<_> = corrupted.paragraphs[lo..=hi].to_vec();
            let mut want: Vec<_> = original.paragraphs[lo..=hi].to_vec();
            got.sort_by_key(key);
            want.sort_by_key(key);
            assert_eq!(got, want, "{id}: M_PARA range is not a permutation");
        }
        ParaDrop => {
            let m = original.paragraphs.len();
            let dropped = trace.dropped.as_ref().expect("drop reports its indices");
            assert_eq!(
                dropped.len(),
                para_drop_count(m),
                "{id}: PARA_DROP dropped {} of {m}, formula says {}",
                dropped.len(),
                para_drop_count(m)
            );
            assert!(dropped.windows(2).all(|w| w[0] < w[1]), "{id}: indices not sorted");
            let survivors: Vec<&Paragraph> = original
                .paragraphs
                .iter()
                .enumerate()
                .filter(|(k, _)| dropped.binary_search(k).is_err())
                .map(|(_, p)| p)
                .collect();
            assert_eq!(corrupted.paragraphs.len(), m - dropped.len());
            for (g, w) in corrupted.paragraphs.iter().zip(survivors) {
                assert_eq!(g, w, "{id}: PARA_DROP reordered or altered a survivor");
            }
        }
        ParaRs | ParaRd => {
            let (lo, hi) = trace.range.expect("replacement reports its range");
            let donor_id = trace.donor_id.as_ref().expect("replacement reports its donor");
            assert_ne!(donor_id, id, "{id}: essay used as its own donor");
            let donor = corpus
                .iter()
                .find(|e| &e.id == donor_id)
                .unwrap_or_else(|| panic!("{id}: donor {donor_id} not in corpus"));
            if label == ParaRs {
                assert_eq!(donor.prompt_id, original.prompt_id, "{id}: PARA_RS donor prompt");
            } else {
                assert_ne!(donor.prompt_id, original.prompt_id, "{id}: PARA_RD donor prompt");
            }
            assert_eq!(corrupted.paragraphs.len(), original.paragraphs.len());
            for (k, (g, w)) in
                corrupted.paragraphs.iter().zip(&original.paragraphs).enumerate()
            {
                if k < lo || k > hi {
                    assert_eq!(g, w, "{id}: {label} touched paragraph {k} outside [{lo}, {hi}]");
                }
            }
            assert!(hi < donor.paragraphs.len(), "{id}: donor shorter than range end");
            assert_eq!(
                &corrupted.paragraphs[lo..=hi],
                &donor.paragraphs[lo..=hi],
                "{id}: replaced range does not come from donor {donor_id}"
            );
            assert_ne!(
                &corrupted.paragraphs[lo..=hi],
                &original.paragraphs[lo..=hi],
                "{id}: {label} replacement changed nothing"
            );
        }
    }
}

/// DI corruptions must write exactly the assigned phrase into each
/// indicator slot and leave every other token untouched. Reconstructs the
/// expected essay from the original, its indicator sites, and the trace's
/// slot assignment, then demands byte equality.
fn assert_di_rewrite(
    original: &Essay,
    corrupted: &Essay,
    trace: &CorruptionTrace,
    lexicon: &DiLexicon,
    label: CorruptionLabel,
) {
    let id = &original.id;
    let sites: Vec<EssayDiSite> = find_dis_in_essay(original, lexicon);
    let assigned = trace.slot_phrases.as_ref().expect("DI corruption reports assignments");
    assert_eq!(assigned.len(), sites.len(), "{id}: one assignment per site");

    // The assignment is a permutation of the original phrase multiset and
    // differs from it.
    let mut orig_phrases: Vec<usize> = sites.iter().map(|s| s.occ.phrase).collect();
    assert_ne!(&orig_phrases, assigned, "{id}: {label} left every slot unchanged");
    let mut sorted_assigned = assigned.clone();
    orig_phrases.sort_unstable();
    sorted_assigned.sort_unstable();
    assert_eq!(orig_phrases, sorted_assigned, "{id}: {label} changed the phrase multiset");

    let mut expected = original.clone();
    // Rewrite right-to-left within each sentence so earlier offsets stay
    // valid while phrase lengths change.
    for (site, &phrase) in sites.iter().zip(assigned).rev() {
        let sentence =
            &mut expected.paragraphs[site.paragraph].sentences[site.sentence].tokens;
        let replacement = &lexicon.phrases()[phrase];
        sentence.splice(site.occ.start..site.occ.start + site.occ.len, replacement.iter().cloned());
    }
    // Like sentence shuffles, DI corruptions emit a flat single-paragraph
    // document: the expected output is the rewritten sentences in order.
    let expected_sentences: Vec<&Sentence> =
        expected.paragraphs.iter().flat_map(|p| &p.sentences).collect();
    assert_eq!(corrupted.paragraphs.len(), 1, "{id}: {label} output not flat");
    let got_sentences: Vec<&Sentence> = corrupted.paragraphs[0].sentences.iter().collect();
    assert_eq!(
        got_sentences, expected_sentences,
        "{id}: {label} output differs from slot-substitution reconstruction"
    );
}

/// MSE of always predicting the corpus mean gold score — the baseline a
/// trained scorer has to beat.
pub fn mean_predictor_mse(golds: &[f64]) -> f64 {
    let mean = golds.iter().sum::<f64>() / golds.len() as f64;
    golds.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / golds.len() as f64
}

/// Independent reference implementations ("oracles") that the library is
/// checked against. Everything here is written straight from the
/// definitions — no code shared with the crate under test.
pub mod oracles {
    use orgscore_core::encoder::{EncoderConfig, EncoderState};
    use orgscore_core::nn::Mat;
    use orgscore_core::text_analysis::{DiLexicon, DiOccurrence};

    /// Brute-force leftmost-longest matching: at each position try every
    /// phrase, keep the longest match, emit it, resume after it. No index,
    /// no candidate-ordering assumptions — just the definition.
    pub fn oracle_find_dis(tokens: &[String], phrases: &[Vec<String>]) -> Vec<DiOccurrence> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut best: Option<(usize, usize)> = None; // (phrase index, len)
            for (p, phrase) in phrases.iter().enumerate() {
                let len = phrase.len();
                if i + len <= tokens.len() && tokens[i..i + len] == phrase[..] {
                    let longer = match best {
                        None => true,
                        Some((_, best_len)) => len > best_len,
                    };
                    if longer {
                        best = Some((p, len));
                    }
                }
            }
            match best {
                Some((p, len)) => {
                    out.push(DiOccurrence { phrase: p, start: i, len });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn lexicon_from(phrases: &[&str]) -> DiLexicon {
        DiLexicon::from_lines(phrases.iter().copied()).expect("valid lexicon")
    }

    /// Lexicons built to stress the matcher: shared prefixes, phrases that
    /// are prefixes of each other, single tokens that also start longer
    /// phrases, and phrases whose tails begin other phrases.
    pub fn adversarial_lexicons() -> Vec<DiLexicon> {
        vec![
            lexicon_from(&["a", "a b", "a b c", "b c", "c"]),
            lexicon_from(&["a b", "b a", "a b a", "b a b"]),
            lexicon_from(&["x", "x x", "x x x", "x x x x"]),
            lexicon_from(&["b", "a b c d", "b c", "c d", "d a"]),
            lexicon_from(&["a a", "a b", "b b", "b a", "a", "b"]),
            lexicon_from(&["c b a", "a b", "b a", "c b", "b c a"]),
            lexicon_from(&["a b c", "b c d", "c d a", "d a b"]),
            lexicon_from(&["d", "c d", "b c d", "a b c d"]),
        ]
    }

    const LN_EPS: f64 = 1e-5;

    fn layer_norm_ref(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        x.iter().zip(gamma).zip(beta).map(|((v, g), b)| (v - mean) * rstd * g + b).collect()
    }

    fn gelu_ref(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
    }

    fn matvec_ref(w: &Mat, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..w.rows)
            .map(|r| {
                let row = w.row(r);
                let dot: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
                dot + if b.is_empty() { 0.0 } else { b[r] }
            })
            .collect()
    }

    fn softmax_ref(scores: &mut [f64]) {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in scores.iter_mut() {
            *s /= sum;
        }
    }

    /// Full transformer forward pass with dense (all-to-all) attention: the
    /// reference a spanning-window run must reproduce.
    pub fn dense_forward(
        cfg: &EncoderConfig,
        state: &EncoderState,
        ids: &[usize],
    ) -> Vec<Vec<f64>> {
        let n = ids.len();
        let d = cfg.d_model;
        let dh = d / cfg.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(p, &id)| {
                state
                    .tok_emb
                    .row(id)
                    .iter()
                    .zip(state.pos_emb.row(p))
                    .map(|(t, ps)| t + ps)
                    .collect()
            })
            .collect();

        for layer in &state.layers {
            let a: Vec<Vec<f64>> =
                x.iter().map(|xp| layer_norm_ref(xp, &layer.ln1_gamma, &layer.ln1_beta)).collect();
            let q: Vec<Vec<f64>> =
                a.iter().map(|ap| matvec_ref(&layer.wq, ap, &layer.bq)).collect();
            let k: Vec<Vec<f64>> =
                a.iter().map(|ap| matvec_ref(&layer.wk, ap, &layer.bk)).collect();
            let v: Vec<Vec<f64>> =
                a.iter().map(|ap| matvec_ref(&layer.wv, ap, &layer.bv)).collect();

            let mut ctx = vec![vec![0.0; d]; n];
            for h in 0..cfg.n_heads {
                let lo = h * dh;
                let hi = lo + dh;
                for p in 0..n {
                    let mut scores: Vec<f64> = (0..n)
                        .map(|u| {
                            q[p][lo..hi]
                                .iter()
                                .zip(&k[u][lo..hi])
                                .map(|(x1, x2)| x1 * x2)
                                .sum::<f64>()
                                * scale
                        })
                        .collect();
                    softmax_ref(&mut scores);
                    for (u, &w) in scores.iter().enumerate() {
                        for (c, vv) in ctx[p][lo..hi].iter_mut().zip(&v[u][lo..hi]) {
                            *c += w * vv;
                        }
                    }
                }
            }

            let x_mid: Vec<Vec<f64>> = (0..n)
                .map(|p| {
                    let o = matvec_ref(&layer.wo, &ctx[p], &layer.bo);
                    x[p].iter().zip(&o).map(|(xv, ov)| xv + ov).collect()
                })
                .collect();

            x = x_mid
                .iter()
                .map(|xm| {
                    let b = layer_norm_ref(xm, &layer.ln2_gamma, &layer.ln2_beta);
                    let t = matvec_ref(&layer.w1, &b, &layer.b1);
                    let g: Vec<f64> = t.iter().map(|&z| gelu_ref(z)).collect();
                    let f = matvec_ref(&layer.w2, &g, &layer.b2);
                    xm.iter().zip(&f).map(|(xv, fv)| xv + fv).collect()
                })
                .collect();
        }
        x
    }

    pub struct WilcoxonOracle {
        pub w_plus: f64,
        pub w_minus: f64,
        pub p: f64,
    }

    /// Straight-from-the-definition signed-rank computation: ranks by
    /// insertion counting, exact two-sided p by recursive enumeration of
    /// all sign assignments.
    pub fn wilcoxon_oracle(a: &[f64], b: &[f64]) -> WilcoxonOracle {
        let diffs: Vec<f64> =
            a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        if diffs.is_empty() {
            return WilcoxonOracle { w_plus: 0.0, w_minus: 0.0, p: 1.0 };
        }
        // Rank of |d_i|: 1 + (#strictly smaller) + (#ties − 1)/2.
        let n = diffs.len();
        let mut ranks = vec![0.0; n];
        for i in 0..n {
            let di = diffs[i].abs();
            let smaller = diffs.iter().filter(|d| d.abs() < di).count();
            let ties = diffs.iter().filter(|d| d.abs() == di).count();
            ranks[i] = smaller as f64 + (ties as f64 - 1.0) / 2.0 + 1.0;
        }
        let w_plus: f64 =
            ranks.iter().zip(&diffs).filter(|&(_, d)| *d > 0.0).map(|(r, _)| r).sum();
        let w_minus: f64 =
            ranks.iter().zip(&diffs).filter(|&(_, d)| *d < 0.0).map(|(r, _)| r).sum();
        let w_min = w_plus.min(w_minus);

        fn count_le(ranks: &[f64], acc: f64, limit: f64) -> u64 {
            match ranks.split_first() {
                None => u64::from(acc <= limit + 1e-9),
                Some((r, rest)) => count_le(rest, acc, limit) + count_le(rest, acc + r, limit),
            }
        }
        let count = count_le(&ranks, 0.0, w_min);
        let p = (2.0 * count as f64 / (1u64 << n) as f64).min(1.0);
        WilcoxonOracle { w_plus, w_minus, p }
    }
}
