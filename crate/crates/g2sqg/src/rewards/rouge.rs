use crate::error::{Error, Result};

/// Weight on recall in the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: LCS-based F-measure with β = 1.2
/// (P = LCS/|cand|, R = LCS/|ref|, F = (1+β²)PR / (R+β²P)).
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Metric("ROUGE-L reference is empty".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}
