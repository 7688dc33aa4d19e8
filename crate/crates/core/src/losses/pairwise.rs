use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::sigmoid_scalar;

use super::PROB_CLAMP;

/// Learned affine map from the elementwise L1 difference to a similarity logit.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHead<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> PairHead<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
        }
    }

    /// Negative weights so that larger distances mean "dissimilar"; the
    /// bias starts at zero.
    pub fn initial(dim: usize) -> Self {
        Self {
            weights: vec![T::lit(-1.0 / dim as f64); dim],
            bias: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseGrads<T> {
    pub loss: T,
    /// Similarity probability after the sigmoid.
    pub prob: T,
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: T,
}

/// Siamese binary cross-entropy on `sigmoid(w · |a − b| + bias)`.
/// `similar` is the target (1 = same class).
pub fn pairwise_loss<T: Scalar>(
    a: &[T],
    b: &[T],
    head: &PairHead<T>,
    similar: bool,
) -> Result<PairwiseGrads<T>> {
    if a.len() != b.len() {
        return Err(Error::dim("pair embedding dimension", a.len(), b.len()));
    }
    if head.weights.len() != a.len() {
        return Err(Error::dim("pair head weights", a.len(), head.weights.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite pair embedding".into()));
    }
    let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let z = head.bias
        + head
            .weights
            .iter()
            .zip(&diff)
            .map(|(&w, &d)| w * d.abs())
            .sum::<T>();
    let s = sigmoid_scalar(z);
    // In f32 `1 − 1e-12` rounds to 1, so the clamp is at least one ulp.
    let lo = T::lit(PROB_CLAMP).max(T::epsilon());
    let hi = T::one() - lo;
    let sc = s.max(lo).min(hi);
    let t = if similar { T::one() } else { T::zero() };
    let loss = if similar {
        -sc.ln()
    } else {
        -(T::one() - sc).ln()
    };
    // The clamp is flat outside [lo, hi].
    let dz = if s > lo && s < hi { s - t } else { T::zero() };
    let grad_a: Vec<T> = head
        .weights
        .iter()
        .zip(&diff)
        .map(|(&w, &d)| dz * w * sign(d))
        .collect();
    let grad_b = grad_a.iter().map(|&g| -g).collect();
    Ok(PairwiseGrads {
        loss,
        prob: s,
        grad_a,
        grad_b,
        grad_weights: diff.iter().map(|&d| dz * d.abs()).collect(),
        grad_bias: dz,
    })
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
