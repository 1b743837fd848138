//! Evaluation metrics and the sequence-level reward
//! r(Y) = f_eval(Y, Y*) + α · f_sem(Y, Y*), with f_eval the sentence
//! BLEU-4 and f_sem = 1/(1 + WMD) so both components share the (0, 1]
//! range and larger means more similar.

mod bleu;
mod rouge;
mod wmd;

pub use bleu::{bleu4, corpus_bleu4, BleuMode};
pub use rouge::{rouge_l, ROUGE_BETA};
pub use wmd::{min_cost_transport, wmd};

use crate::error::Result;
use serde::Serialize;

pub const DEFAULT_ALPHA: f64 = 0.1;

/// Per-sequence reward breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct RewardReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub wmd: f64,
    pub f_sem: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Combined reward of a candidate against its reference.
pub fn total_reward<F>(
    candidate: &[String],
    reference: &[String],
    embed: F,
    alpha: f64,
) -> Result<RewardReport>
where
    F: Fn(&str) -> Vec<f64>,
{
    let bleu = bleu4(candidate, reference, BleuMode::Sentence)?;
    let rouge = rouge_l(candidate, reference)?;
    let distance = if candidate.is_empty() {
        // An empty candidate earns no semantic credit; the transport
        // problem itself would be undefined.
        f64::INFINITY
    } else {
        wmd(candidate, reference, embed)?
    };
    let f_sem = 1.0 / (1.0 + distance);
    Ok(RewardReport {
        bleu4: bleu,
        rouge_l: rouge,
        wmd: distance,
        f_sem,
        alpha,
        total: bleu + alpha * f_sem,
    })
}

/// Corpus-level metric report for the `evaluate` command.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub n: usize,
}

/// Corpus BLEU-4 plus mean ROUGE-L over aligned prediction/reference
/// pairs.
pub fn evaluate_corpus(pairs: &[(Vec<String>, Vec<String>)]) -> Result<MetricReport> {
    let bleu = corpus_bleu4(pairs)?;
    let mut rouge_sum = 0.0;
    for (c, r) in pairs {
        rouge_sum += rouge_l(c, r)?;
    }
    Ok(MetricReport {
        bleu4: bleu,
        rouge_l: rouge_sum / pairs.len() as f64,
        n: pairs.len(),
    })
}
