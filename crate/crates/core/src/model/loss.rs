//! Softmax cross-entropy and prediction helpers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of the largest logit; ties resolve to the lowest class index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_label(label: usize, num_classes: usize) -> Result<()> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

/// `-ln softmax(logits)[label]`, computed with a log-sum-exp shift.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label].as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("cross-entropy for label {label}")));
    }
    Ok(loss.max(0.0))
}

/// Softmax probability assigned to `label`.
pub fn true_class_confidence<T: Scalar>(logits: &[T], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    Ok(softmax(logits)[label])
}

/// Gradient of the cross-entropy w.r.t. the logits: `softmax - onehot(label)`.
pub fn cross_entropy_grad<T: Scalar>(logits: &[T], label: usize) -> Result<Vec<f64>> {
    check_label(label, logits.len())?;
    let mut p = softmax(logits);
    p[label] -= 1.0;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_logits_give_ln2() {
        for label in 0..2 {
            assert_abs_diff_eq!(cross_entropy(&[0.0f64, 0.0], label).unwrap(), 2f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn saturated_correct_class_is_near_zero() {
        let l = cross_entropy(&[1000.0f64, 0.0], 0).unwrap();
        assert!(l.abs() < 1e-6);
    }

    #[test]
    fn three_class_value() {
        // -ln(e / (e + e^2 + e^3))
        let expected = -(1f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert_abs_diff_eq!(expected, 2.4076, epsilon = 1e-4);
        assert_abs_diff_eq!(cross_entropy(&[1.0f32, 2.0, 3.0], 0).unwrap(), expected, epsilon = 1e-6);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        assert!(matches!(
            cross_entropy(&[0.0f64, 1.0], 2),
            Err(Error::LabelOutOfRange { label: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0f32, 2.0, 2.0]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[3.0f64, -1.0, 0.25, 10.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
