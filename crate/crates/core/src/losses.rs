//! Training objectives: label-smoothed cross-entropy plus the masked
//! identity temporal-consistency term.

use serde::{Deserialize, Serialize};

use crate::error::{PiaError, Result};
use crate::scalar::Real;

pub const DEFAULT_SMOOTHING: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Denominator guard of the consistency loss.
pub const CONSISTENCY_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub arcface: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, arcface: f64, lambda: f64) -> Self {
        Self {
            ce,
            arcface,
            total: total_loss(ce, arcface, lambda),
            lambda,
        }
    }
}

/// Smoothed target: `1 - s` on the true class, `s` spread over the others.
fn smoothed_target(classes: usize, label: usize, smoothing: f64) -> Vec<f64> {
    let off = if classes > 1 { smoothing / (classes - 1) as f64 } else { 0.0 };
    (0..classes)
        .map(|c| if c == label { 1.0 - smoothing } else { off })
        .collect()
}

fn check_ce_inputs<T: Real>(logits: &[T], label: usize, smoothing: f64) -> Result<()> {
    if logits.len() < 2 || label >= logits.len() {
        return Err(PiaError::InvalidInput(format!(
            "label {label} for {} logits",
            logits.len()
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(PiaError::InvalidInput(format!("smoothing {smoothing} outside [0, 1)")));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(PiaError::Numerical(format!("non-finite logits {logits:?}")));
    }
    Ok(())
}

fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}

/// Cross-entropy against the label-smoothed target.
pub fn cross_entropy_smoothed<T: Real>(logits: &[T], label: usize, smoothing: f64) -> Result<T> {
    Ok(cross_entropy_with_grad(logits, label, smoothing)?.0)
}

/// Loss and its gradient with respect to the logits (`softmax - target`).
pub fn cross_entropy_with_grad<T: Real>(logits: &[T], label: usize, smoothing: f64) -> Result<(T, Vec<T>)> {
    check_ce_inputs(logits, label, smoothing)?;
    let logp = log_softmax(logits);
    let target = smoothed_target(logits.len(), label, smoothing);
    let loss = logp
        .iter()
        .zip(&target)
        .map(|(&lp, &q)| -T::of(q) * lp)
        .sum::<T>();
    let grad = logp
        .iter()
        .zip(&target)
        .map(|(&lp, &q)| lp.exp() - T::of(q))
        .collect();
    Ok((loss, grad))
}

/// Masked mean of `1 - cos(a_t, a_{t+1})` over consecutive pairs.
///
/// A pair counts when both of its frames are unmasked. With every pair
/// masked the numerator is zero and the result is 0.
pub fn arcface_consistency<V: AsRef<[f32]>>(embeddings: &[V], mask: &[bool], eps: f64) -> Result<f64> {
    let as_f64: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.as_ref().iter().map(|&x| x as f64).collect())
        .collect();
    Ok(arcface_consistency_with_grad(&as_f64, mask, eps)?.0)
}

/// Consistency loss and its gradient with respect to every embedding.
pub fn arcface_consistency_with_grad(embeddings: &[Vec<f64>], mask: &[bool], eps: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if embeddings.len() < 2 {
        return Err(PiaError::InvalidInput(format!(
            "consistency loss needs at least two frames, got {}",
            embeddings.len()
        )));
    }
    if mask.len() != embeddings.len() {
        return Err(PiaError::InvalidInput(format!(
            "mask has {} entries for {} frames",
            mask.len(),
            embeddings.len()
        )));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(PiaError::Shape("embeddings differ in dimension".into()));
    }

    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let pairs: Vec<usize> = (0..embeddings.len() - 1)
        .filter(|&t| mask[t] && mask[t + 1])
        .collect();
    let denom = pairs.len() as f64 + eps;

    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut numer = 0.0;
    for &t in &pairs {
        let (a, b) = (&embeddings[t], &embeddings[t + 1]);
        let (na, nb) = (norms[t], norms[t + 1]);
        if na == 0.0 || nb == 0.0 {
            // cosine undefined; the pair contributes a full deviation
            numer += 1.0;
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let cos = dot / (na * nb);
        numer += 1.0 - cos;
        // d(1 - cos)/da = -(b / (|a||b|) - cos a / |a|^2)
        for k in 0..dim {
            grads[t][k] -= (b[k] / (na * nb) - cos * a[k] / (na * na)) / denom;
            grads[t + 1][k] -= (a[k] / (na * nb) - cos * b[k] / (nb * nb)) / denom;
        }
    }
    Ok((numer / denom, grads))
}

/// `ce + lambda * arcface`.
pub fn total_loss(ce: f64, arcface: f64, lambda: f64) -> f64 {
    ce + lambda * arcface
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_logits_have_near_zero_loss() {
        let l = cross_entropy_smoothed(&[20.0f64, -20.0], 0, 0.0).unwrap();
        assert!(l < 1e-15);
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        for s in [0.0, 0.1, 0.5, 0.9] {
            let l = cross_entropy_smoothed(&[0.0f64, 0.0], 1, s).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothed_loss_matches_hand_computation() {
        let (a, b) = (2.0f64, -1.0f64);
        let z = a.exp() + b.exp();
        let (p0, p1) = (a.exp() / z, b.exp() / z);
        let expected = -(0.9 * p0.ln() + 0.1 * p1.ln());
        let got = cross_entropy_smoothed(&[a, b], 0, 0.1).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_logits_are_numerical_errors() {
        let err = cross_entropy_smoothed(&[f64::NAN, 0.0], 0, 0.1).unwrap_err();
        assert_eq!(err.kind(), "NumericalError");
    }

    #[test]
    fn consistency_examples() {
        let mut e1 = vec![0.0f32; 512];
        e1[0] = 1.0;
        let mut e2 = vec![0.0f32; 512];
        e2[1] = 1.0;
        let neg: Vec<f32> = e2.iter().map(|x| -x).collect();

        let constant = arcface_consistency(&[e1.clone(), e1.clone(), e1.clone()], &[true; 3], CONSISTENCY_EPSILON).unwrap();
        assert!(constant.abs() < 1e-12);

        let orth = arcface_consistency(&[e1.clone(), e2.clone()], &[true; 2], CONSISTENCY_EPSILON).unwrap();
        assert!((orth - 1.0).abs() < 1e-7);

        let masked = arcface_consistency(&[e1, e2, neg], &[true, true, false], CONSISTENCY_EPSILON).unwrap();
        assert_eq!(masked, 1.0 / (1.0 + CONSISTENCY_EPSILON));
    }

    #[test]
    fn all_masked_is_zero() {
        let e = vec![vec![1.0f32; 4], vec![-1.0f32; 4]];
        assert_eq!(arcface_consistency(&e, &[false, false], CONSISTENCY_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert!((total_loss(0.5, 0.2, DEFAULT_LAMBDA) - 0.52).abs() < 1e-15);
        assert_eq!(total_loss(0.5, 0.2, 0.0), 0.5);
        let b = LossBreakdown::new(0.5, 0.2, 0.1);
        assert_eq!(b.total, 0.5 + 0.1 * 0.2);
    }
}
