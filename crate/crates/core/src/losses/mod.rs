//! Metric-learning objectives and the cross-entropy baseline. Every loss
//! returns its value together with the gradient with respect to the
//! embeddings it was given.

mod cross_entropy;
mod magnet;
mod pairwise;
mod triplet;

pub use cross_entropy::{cross_entropy, cross_entropy_logits};
pub use magnet::{
    magnet_loss, variance_estimate, variance_estimate_literal, MagnetForm, MagnetTerms,
    VARIANCE_FLOOR,
};
pub use pairwise::{pairwise_loss, PairHead, PairwiseGrads};
pub use triplet::{mine_semi_hard, triplet_batch_loss, triplet_loss, TripletIndices};

/// Lower clamp applied inside every logarithm.
pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_CLUSTERS: usize = 3;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_batch<T: Scalar>(embeddings: &Tensor<T>, labels: &[usize]) -> Result<()> {
    if embeddings.rank() != 2 {
        return Err(Error::dim("embedding batch rank", 2, embeddings.rank()));
    }
    if embeddings.shape()[0] != labels.len() {
        return Err(Error::dim(
            "embedding batch rows vs labels",
            labels.len(),
            embeddings.shape()[0],
        ));
    }
    if !embeddings.is_finite() {
        return Err(Error::Evaluation("non-finite embedding".into()));
    }
    Ok(())
}
