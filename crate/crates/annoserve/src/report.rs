//! Rubric aggregation over (annotator, sample) units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::rubric::{question, Answer, BinaryAnswer, Category, Scale, RUBRIC};
use crate::store::RubricAnnotation;
use crate::{AnnoError, Result};

/// Mean with a 95% Student-t confidence half-width over `n` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

/// `t(0.975, n-1) · s / √n` with the sample standard deviation `s`;
/// the half-width is 0 for a single value. `None` for no values.
pub fn t_interval(values: &[f64]) -> Option<Interval> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || values.iter().all(|&v| v == values[0]) {
        return Some(Interval { mean: if n == 1 { values[0] } else { mean }, half_width: 0.0, n });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Some(Interval { mean, half_width: t * var.sqrt() / (n as f64).sqrt(), n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricReport {
    pub n_units: usize,
    /// Validation rate per guideline category; categories where every unit
    /// answered only NA are absent.
    pub categories: BTreeMap<Category, Interval>,
    /// Validation rate pooled over all guideline questions of a unit.
    pub global: Option<Interval>,
    /// Mean of each Likert quality criterion.
    pub likert: BTreeMap<String, Interval>,
    /// Share of NotRespected answers (NA excluded) for the binary quality
    /// criteria, which ask about the presence of a defect.
    pub defect_rates: BTreeMap<String, Interval>,
}

fn ratio(respected: usize, not_respected: usize) -> Option<f64> {
    let total = respected + not_respected;
    (total > 0).then(|| respected as f64 / total as f64)
}

/// Aggregate annotations, one unit per annotation.
pub fn aggregate_rubric(annotations: &[RubricAnnotation]) -> Result<RubricReport> {
    if annotations.is_empty() {
        return Err(AnnoError::NoAnnotations);
    }
    // Fixed unit order keeps floating-point sums independent of input order.
    let mut units: Vec<&RubricAnnotation> = annotations.iter().collect();
    units.sort_by(|a, b| {
        (&a.annotator, &a.sample_id)
            .cmp(&(&b.annotator, &b.sample_id))
            .then_with(|| serde_json::to_string(&a.answers).ok().cmp(&serde_json::to_string(&b.answers).ok()))
    });

    let mut per_category: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    let mut global = Vec::new();
    let mut likert: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut defects: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for unit in &units {
        let mut counts: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for (code, answer) in &unit.answers {
            let Some(q) = question(code) else { continue };
            match (q.category, q.scale, answer) {
                (Category::Quality, Scale::Likert0to4, Answer::Likert(v)) => {
                    likert.entry(code.clone()).or_default().push(f64::from(*v));
                }
                (Category::Quality, Scale::BinaryNA, Answer::Binary(b)) => match b {
                    BinaryAnswer::Respected => defects.entry(code.clone()).or_default().push(0.0),
                    BinaryAnswer::NotRespected => defects.entry(code.clone()).or_default().push(1.0),
                    BinaryAnswer::NotApplicable => {}
                },
                (category, Scale::BinaryNA, Answer::Binary(b)) => {
                    let c = counts.entry(category).or_default();
                    match b {
                        BinaryAnswer::Respected => c.0 += 1,
                        BinaryAnswer::NotRespected => c.1 += 1,
                        BinaryAnswer::NotApplicable => {}
                    }
                }
                _ => {}
            }
        }
        for (&category, &(r, nr)) in &counts {
            if let Some(rate) = ratio(r, nr) {
                per_category.entry(category).or_default().push(rate);
            }
        }
        let (r, nr) = counts.values().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
        if let Some(rate) = ratio(r, nr) {
            global.push(rate);
        }
    }

    let intervals = |m: BTreeMap<String, Vec<f64>>| -> BTreeMap<String, Interval> {
        m.into_iter().filter_map(|(k, v)| t_interval(&v).map(|i| (k, i))).collect()
    };
    Ok(RubricReport {
        n_units: units.len(),
        categories: per_category
            .into_iter()
            .filter_map(|(k, v)| t_interval(&v).map(|i| (k, i)))
            .collect(),
        global: t_interval(&global),
        likert: intervals(likert),
        defect_rates: intervals(defects),
    })
}

/// Number of guideline questions that feed the Global rate.
pub fn guideline_question_count() -> usize {
    RUBRIC.iter().filter(|q| q.is_guideline()).count()
}
