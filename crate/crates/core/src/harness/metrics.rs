//! Ranking metrics with midrank tie handling.
//!
//! Labels are `true` for the positive (fake) class. Both AUC and AP depend
//! only on the order of the scores and their ties, so any strictly
//! increasing transform leaves them unchanged.

use crate::error::{PiaError, Result};

fn counts(labels: &[bool]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(PiaError::Metric(format!(
            "ranking metrics need both classes; got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(PiaError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PiaError::Metric("NaN score".into()));
    }
    Ok(())
}

/// `(positives, negatives)` per distinct score, highest score first.
fn tie_blocks(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            blocks.push((0, 0));
            prev = Some(scores[i]);
        }
        let b = blocks.last_mut().expect("block pushed above");
        if labels[i] {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

/// Area under the ROC curve by the trapezoidal rule, in `[0, 1]`.
///
/// Accumulated in integers as twice the area times `P * N`, so the result
/// is the exact same rational as the pairwise estimator.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let (pos, neg) = counts(labels)?;
    let mut tp = 0u64;
    let mut twice_area = 0u128;
    for (p, n) in tie_blocks(scores, labels) {
        twice_area += n as u128 * (2 * tp + p) as u128;
        tp += p;
    }
    Ok(twice_area as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Fraction of positive/negative pairs ranked correctly, ties counting one
/// half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let (pos, neg) = counts(labels)?;
    let mut twice = 0u128;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over distinct score
/// thresholds, highest first.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let (pos, _) = counts(labels)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in tie_blocks(scores, labels) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Fraction of correct decisions with `score >= threshold` meaning positive.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    if scores.is_empty() {
        return Err(PiaError::Metric("accuracy of an empty set".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// ROC operating points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check(scores, labels)?;
    let (pos, neg) = counts(labels)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut pts = vec![(0.0, 0.0)];
    for (p, n) in tie_blocks(scores, labels) {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}
