use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuMode {
    /// Per-pair score with smoothing, usable as a per-sequence reward:
    /// orders n ≥ 2 take add-one smoothing (m+1)/(ℓ+1); a zero unigram
    /// match is floored at 1/(ℓ+1) so disjoint pairs score > 0.
    Sentence,
    /// Raw clipped counts, aggregated over the corpus, unsmoothed.
    Corpus,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped match count and total candidate n-gram count for one order.
fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let total: usize = cand.values().sum();
    let matched: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refr.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, total)
}

fn combine(
    matches: [usize; 4],
    totals: [usize; 4],
    cand_len: usize,
    ref_len: usize,
    mode: BleuMode,
) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = (matches[n] as f64, totals[n] as f64);
        let p = match mode {
            BleuMode::Corpus => {
                if m == 0.0 || t == 0.0 {
                    return 0.0;
                }
                m / t
            }
            BleuMode::Sentence => {
                if n == 0 {
                    if m > 0.0 {
                        m / t
                    } else {
                        1.0 / (t + 1.0)
                    }
                } else {
                    (m + 1.0) / (t + 1.0)
                }
            }
        };
        log_sum += p.ln();
    }
    let precision_term = (log_sum / 4.0).exp();
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    brevity * precision_term
}

/// BLEU-4: geometric mean of modified 1–4-gram precisions times the
/// brevity penalty.
pub fn bleu4(candidate: &[String], reference: &[String], mode: BleuMode) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Metric("BLEU reference is empty".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for n in 1..=4 {
        let (m, t) = clipped_matches(candidate, reference, n);
        matches[n - 1] = m;
        totals[n - 1] = t;
    }
    Ok(combine(
        matches,
        totals,
        candidate.len(),
        reference.len(),
        mode,
    ))
}

/// Corpus BLEU-4 over (candidate, reference) pairs: counts and lengths
/// aggregate over the corpus before the ratio, unsmoothed.
pub fn corpus_bleu4(pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("corpus BLEU over zero pairs".into()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (candidate, reference) in pairs {
        if reference.is_empty() {
            return Err(Error::Metric("BLEU reference is empty".into()));
        }
        cand_len += candidate.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let (m, t) = clipped_matches(candidate, reference, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    Ok(combine(
        matches,
        totals,
        cand_len,
        ref_len,
        BleuMode::Corpus,
    ))
}
