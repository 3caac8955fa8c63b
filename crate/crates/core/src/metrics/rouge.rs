use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{f1, MetricError, Result};
use crate::textstats::lowercase_words;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, hyp_total);
        let recall = ratio(overlap, ref_total);
        Self { precision, recall, f1: f1(precision, recall) }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(reference: &str, hypothesis: &str, n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    Ok(rouge_n_tokens(&lowercase_words(reference), &lowercase_words(hypothesis), n))
}

pub fn rouge_n_tokens(reference: &[String], hypothesis: &[String], n: usize) -> RougeScore {
    let ref_counts = ngram_counts(reference, n);
    let hyp_counts = ngram_counts(hypothesis, n);
    let overlap = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        hypothesis.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// ROUGE-L over one longest common subsequence of the full token sequences.
pub fn rouge_l(reference: &str, hypothesis: &str) -> Result<RougeScore> {
    let reference = lowercase_words(reference);
    let hypothesis = lowercase_words(hypothesis);
    if reference.is_empty() {
        return Err(MetricError::EmptyText("reference"));
    }
    if hypothesis.is_empty() {
        return Err(MetricError::EmptyText("hypothesis"));
    }
    Ok(rouge_l_tokens(&reference, &hypothesis))
}

pub fn rouge_l_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    let lcs = lcs_length(reference, hypothesis);
    RougeScore::from_counts(lcs, hypothesis.len(), reference.len())
}

/// Classic O(n·m) dynamic program, one row at a time.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..12)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn f1_symmetric(r in seq(), h in seq(), n in 1usize..4) {
            let ab = rouge_n_tokens(&r, &h, n);
            let ba = rouge_n_tokens(&h, &r, n);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.f1, ba.f1);
            let ab = rouge_l_tokens(&r, &h);
            let ba = rouge_l_tokens(&h, &r);
            prop_assert_eq!(ab.f1, ba.f1);
        }

        #[test]
        fn in_unit_range(r in seq(), h in seq(), n in 1usize..4) {
            for s in [rouge_n_tokens(&r, &h, n), rouge_l_tokens(&r, &h)] {
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
