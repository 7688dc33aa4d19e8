use super::PROB_CLAMP;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_label(len: usize, label: usize) -> Result<()> {
    if label >= len {
        return Err(Error::Contract(format!(
            "label {label} out of range for {len} classes"
        )));
    }
    Ok(())
}

/// `−ln p[label]` on a softmax output, with the gradient with respect to the
/// logits that produced it (`p − onehot(label)`).
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<(T, Vec<T>)> {
    check_label(probs.len(), label)?;
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Evaluation("non-finite probability".into()));
    }
    let loss = -probs[label].max(T::lit(PROB_CLAMP)).ln();
    let mut grad = probs.to_vec();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Cross-entropy computed from raw logits via a stable log-softmax.
pub fn cross_entropy_logits<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    check_label(logits.len(), label)?;
    if logits.iter().any(|p| !p.is_finite()) {
        return Err(Error::Evaluation("non-finite logit".into()));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    let log_p = logits[label] - lse;
    let loss = -log_p.max(T::lit(PROB_CLAMP).ln());
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_ln3() {
        let (l, g) = cross_entropy(&[1.0 / 3.0; 3], 1).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        assert!((g[1] + 2.0 / 3.0).abs() < 1e-12);
        let (l2, _) = cross_entropy_logits(&[0.5f64; 3], 2).unwrap();
        assert!((l2 - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn certain_is_zero() {
        let (l, g) = cross_entropy(&[0.0, 1.0, 0.0f64], 1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_probability_is_clamped() {
        let (l, _) = cross_entropy(&[1.0, 0.0, 0.0f64], 2).unwrap();
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.5f64, 0.5], 2),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            cross_entropy_logits(&[0.5f64, 0.5], 9),
            Err(Error::Contract(_))
        ));
    }
}
