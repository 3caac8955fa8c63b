//! SARI with F1 for all three operations (keep, add, delete).
//!
//! For each n-gram order the source, hypothesis and references are reduced
//! to n-gram *sets* (references are pooled):
//!
//! | operation | target set        | hypothesis decisions | correct decisions        |
//! |-----------|-------------------|----------------------|--------------------------|
//! | keep      | `S ∩ R`           | `H ∩ S`              | `H ∩ S ∩ R`              |
//! | add       | `R ∖ S`           | `H ∖ S`              | `(H ∖ S) ∩ R`            |
//! | delete    | `S ∖ R`           | `S ∖ H`              | `(S ∖ H) ∖ R`            |
//!
//! Precision divides by the decision set, recall by the target set. When both
//! are empty the operation scores 1; when exactly one is empty it scores 0.
//! Orders are averaged only over the orders at which at least one of the
//! texts has an n-gram, so short texts are not credited for absent orders.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{f1, MetricError, Result};
use crate::textstats::lowercase_words;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SariScore {
    pub f_keep: f64,
    pub f_add: f64,
    pub f_del: f64,
    pub sari: f64,
}

pub fn sari(source: &str, hypothesis: &str, references: &[&str]) -> Result<SariScore> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let source = lowercase_words(source);
    let hypothesis = lowercase_words(hypothesis);
    if source.is_empty() {
        return Err(MetricError::EmptyText("source"));
    }
    if hypothesis.is_empty() {
        return Err(MetricError::EmptyText("hypothesis"));
    }
    let references: Vec<Vec<String>> = references.iter().map(|r| lowercase_words(r)).collect();
    Ok(sari_tokens(&source, &hypothesis, &references))
}

pub fn sari_tokens<T: Eq + std::hash::Hash>(
    source: &[T],
    hypothesis: &[T],
    references: &[Vec<T>],
) -> SariScore {
    let (mut keep, mut add, mut del) = (0.0, 0.0, 0.0);
    let mut orders = 0usize;
    for n in 1..=MAX_ORDER {
        let s = ngram_set(source, n);
        let h = ngram_set(hypothesis, n);
        let r: HashSet<&[T]> = references.iter().flat_map(|r| ngram_set(r, n)).collect();
        if s.is_empty() && h.is_empty() && r.is_empty() {
            continue;
        }
        orders += 1;

        let keep_target = s.intersection(&r).count();
        let keep_decisions = h.intersection(&s).count();
        let keep_correct = h.iter().filter(|g| s.contains(*g) && r.contains(*g)).count();
        keep += operation_f1(keep_correct, keep_decisions, keep_target);

        let add_target = r.difference(&s).count();
        let add_decisions = h.difference(&s).count();
        let add_correct = h.iter().filter(|g| !s.contains(*g) && r.contains(*g)).count();
        add += operation_f1(add_correct, add_decisions, add_target);

        let del_target = s.difference(&r).count();
        let del_decisions = s.difference(&h).count();
        let del_correct = s.iter().filter(|g| !h.contains(*g) && !r.contains(*g)).count();
        del += operation_f1(del_correct, del_decisions, del_target);
    }
    // source and hypothesis are nonempty for callers of `sari`; guard anyway
    let orders = orders.max(1) as f64;
    let f_keep = 100.0 * keep / orders;
    let f_add = 100.0 * add / orders;
    let f_del = 100.0 * del / orders;
    SariScore {
        f_keep,
        f_add,
        f_del,
        sari: (f_keep + f_add + f_del) / 3.0,
    }
}

fn ngram_set<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashSet<&[T]> {
    tokens.windows(n).collect()
}

/// F1 of one operation at one order with the empty-set convention.
pub(crate) fn operation_f1(correct: usize, decisions: usize, target: usize) -> f64 {
    match (decisions, target) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => f1(correct as f64 / decisions as f64, correct as f64 / target as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_score_100() {
        let s = sari("le chat dort", "le chat dort", &["le chat dort"]).unwrap();
        assert_eq!((s.f_keep, s.f_add, s.f_del, s.sari), (100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn perfect_rewrite() {
        let s = sari("a b", "c d", &["c d"]).unwrap();
        assert_eq!(s.sari, 100.0);
    }

    #[test]
    fn copying_source_is_penalised() {
        let s = sari("a b", "a b", &["c d"]).unwrap();
        assert_eq!(s.f_add, 0.0);
        assert_eq!(s.f_del, 0.0);
        assert_eq!(s.sari, s.f_keep / 3.0);
    }

    #[test]
    fn partial_keep() {
        // order 1: S={a,b,c} R={a,b} H={a}: keep P=1 R=1/2 -> 2/3
        // order 2: S={ab,bc} R={ab} H={}: keep decisions 0, target 1 -> 0
        // order 3: S={abc}: keep target 0, decisions 0 -> 1
        let s = sari("a b c", "a", &["a b"]).unwrap();
        assert!((s.f_keep - 100.0 * (2.0 / 3.0 + 0.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(sari("a", "a", &[]), Err(MetricError::NoReferences)));
        assert!(sari("", "a", &["a"]).is_err());
        assert!(sari("a", "", &["a"]).is_err());
    }

    #[test]
    fn references_are_pooled() {
        let one = sari("a b", "c", &["c"]).unwrap();
        let two = sari("a b", "c", &["c", "c"]).unwrap();
        assert_eq!(one, two);
    }
}
