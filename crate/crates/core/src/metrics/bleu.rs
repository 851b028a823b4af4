use std::collections::HashMap;

use super::MetricError;
use crate::retrieve_text::tokenize;

/// Floor substituted for zero n-gram precisions.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram precision of `cand` against `reference`.
pub fn modified_precision(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.len() < n {
        return 0.0;
    }
    let ref_counts = ngram_counts(reference, n);
    let clipped: usize = ngram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    clipped as f64 / (cand.len() + 1 - n) as f64
}

/// Sentence BLEU with uniform weights over n = 1..=min(max_n, |candidate|).
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> Result<f64, MetricError> {
    let reference = tokenize(reference);
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if max_n == 0 {
        return Err(MetricError::BadMaxN);
    }
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let orders = max_n.min(cand.len());
    let log_sum: f64 = (1..=orders)
        .map(|n| {
            let p = modified_precision(&cand, &reference, n);
            if p == 0.0 { BLEU_EPSILON } else { p }.ln()
        })
        .sum();
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok((brevity * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}
