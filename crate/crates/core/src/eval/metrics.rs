use std::borrow::Borrow;

use super::{PredictionRow, PredictionSet};
use crate::data::{DemographicGroup, Label};
use crate::error::{Error, Result};

/// Count, accuracy, TPR and AUC of one subset of predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
    /// `None` iff `count == 0`.
    pub accuracy: Option<f64>,
    /// `None` iff there are no positive (fake) samples.
    pub tpr: Option<f64>,
    /// `None` unless both classes are present.
    pub auc: Option<f64>,
}

pub fn summarize<R: Borrow<PredictionRow>>(rows: &[R], threshold: f64) -> MetricSummary {
    let positives = rows.iter().map(Borrow::borrow).filter(|r: &&PredictionRow| r.true_label == Label::Fake).count();
    let correct = rows.iter().map(Borrow::borrow).filter(|r: &&PredictionRow| r.is_correct(threshold)).count();
    MetricSummary {
        count: rows.len(),
        positives,
        negatives: rows.len() - positives,
        accuracy: (!rows.is_empty()).then(|| correct as f64 / rows.len() as f64),
        tpr: true_positive_rate(rows, threshold),
        auc: area_under_curve(rows),
    }
}

pub fn overall_accuracy(preds: &PredictionSet, threshold: f64) -> Result<f64> {
    summarize(preds.rows(), threshold)
        .accuracy
        .ok_or_else(|| Error::invalid("accuracy of an empty prediction set"))
}

/// Accuracy of each group in canonical order; `None` marks groups with no rows.
pub fn per_group_accuracy(preds: &PredictionSet, threshold: f64) -> [Option<f64>; DemographicGroup::COUNT] {
    let mut correct = [0usize; DemographicGroup::COUNT];
    let mut total = [0usize; DemographicGroup::COUNT];
    for r in preds.rows() {
        let k = r.group.index();
        total[k] += 1;
        correct[k] += usize::from(r.is_correct(threshold));
    }
    std::array::from_fn(|k| (total[k] > 0).then(|| correct[k] as f64 / total[k] as f64))
}

/// Largest accuracy gap between any two present groups, i.e. `max − min` over `Some` entries.
pub fn max_disparity(accuracies: &[Option<f64>]) -> Result<f64> {
    let present = accuracies.iter().flatten().copied();
    let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    if lo > hi {
        return Err(Error::invalid("max disparity needs at least one present group"));
    }
    Ok(hi - lo)
}

pub fn true_positive_rate<R: Borrow<PredictionRow>>(rows: &[R], threshold: f64) -> Option<f64> {
    let (mut tp, mut pos) = (0usize, 0usize);
    for r in rows.iter().map(Borrow::borrow) {
        if r.true_label == Label::Fake {
            pos += 1;
            tp += usize::from(r.predicted_fake(threshold));
        }
    }
    (pos > 0).then(|| tp as f64 / pos as f64)
}

/// Probability that a random fake outranks a random real, ties counted one half.
///
/// Computed from midranks: twice the Mann-Whitney statistic is an exact integer, so the
/// result is bit-identical to counting all positive/negative pairs.
pub fn area_under_curve<R: Borrow<PredictionRow>>(rows: &[R]) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = rows
        .iter()
        .map(|r| {
            let r = r.borrow();
            (r.score, r.true_label == Label::Fake)
        })
        .collect();
    let pos = scored.iter().filter(|s| s.1).count() as u64;
    let neg = scored.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i + 1;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank (i+1+j)/2.
        let twice_mid = (i + 1 + j) as u64;
        let tied_pos = scored[i..j].iter().filter(|s| s.1).count() as u64;
        twice_rank_sum += twice_mid * tied_pos;
        i = j;
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Some(twice_u as f64 / (2 * pos * neg) as f64)
}
