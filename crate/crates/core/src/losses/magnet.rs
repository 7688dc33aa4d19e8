use super::check_batch;
use crate::cluster::{ClusterId, ClusterModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound applied to σ² before it is used as a divisor.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Which reading of the cluster-distance terms to use. `Literal` keeps the
/// printed `‖r + μ‖` in the own-cluster term and is only for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MagnetForm {
    #[default]
    Corrected,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetTerms<T> {
    pub alpha: T,
    pub k: usize,
    pub variance: T,
    pub form: MagnetForm,
}

impl<T: Scalar> MagnetTerms<T> {
    pub fn new(alpha: T, k: usize, variance: T) -> Result<Self> {
        if k == 0 {
            return Err(Error::Contract("K must be at least 1".into()));
        }
        if !(variance > T::zero()) || !variance.is_finite() {
            return Err(Error::Contract(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Ok(Self {
            alpha,
            k,
            variance,
            form: MagnetForm::Corrected,
        })
    }

    pub fn with_form(mut self, form: MagnetForm) -> Self {
        self.form = form;
        self
    }
}

/// Mean over the batch of
/// `max(0, ‖r − μ(r)‖²/(2σ²) + α + ln Σ_imposters exp(−‖r − μ‖²/(2σ²)))`,
/// where `μ(r)` is the centroid named by `assigned`. Centroids are constants.
pub fn magnet_loss<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    assigned: &[ClusterId],
    clusters: &ClusterModel<T>,
    terms: &MagnetTerms<T>,
) -> Result<(T, Tensor<T>)> {
    check_batch(embeddings, labels)?;
    if assigned.len() != labels.len() {
        return Err(Error::dim(
            "magnet cluster assignments",
            labels.len(),
            assigned.len(),
        ));
    }
    if !(terms.variance > T::zero()) {
        return Err(Error::Contract(format!(
            "variance must be positive, got {}",
            terms.variance
        )));
    }
    let n = labels.len();
    let dim = embeddings.shape()[1];
    let two_var = T::lit(2.0) * terms.variance;
    let mut grads = Tensor::zeros(embeddings.shape());
    if n == 0 {
        return Ok((T::zero(), grads));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let ids = clusters.cluster_ids();
    let mut total = T::zero();
    for i in 0..n {
        let r = embeddings.row(i);
        let own_id = assigned[i];
        if own_id.class != labels[i] {
            return Err(Error::Contract(format!(
                "sample {i} has label {} but is assigned to a cluster of class {}",
                labels[i], own_id.class
            )));
        }
        let own = clusters.centroid(own_id).ok_or_else(|| {
            Error::Contract(format!(
                "label {} has no cluster {}",
                labels[i], own_id.index
            ))
        })?;
        let own_diff: Vec<T> = match terms.form {
            MagnetForm::Corrected => r.iter().zip(own).map(|(&x, &m)| x - m).collect(),
            MagnetForm::Literal => r.iter().zip(own).map(|(&x, &m)| x + m).collect(),
        };
        let own_q = own_diff.iter().map(|&d| d * d).sum::<T>() / two_var;

        let imposters: Vec<&[T]> = ids
            .iter()
            .filter(|id| id.class != labels[i])
            .map(|&id| clusters.centroid(id).expect("listed id"))
            .collect();
        if imposters.is_empty() {
            return Err(Error::Contract(
                "no imposter clusters: only one class is clustered".into(),
            ));
        }
        let neg_q: Vec<T> = imposters
            .iter()
            .map(|mu| {
                -r.iter()
                    .zip(mu.iter())
                    .map(|(&x, &m)| (x - m) * (x - m))
                    .sum::<T>()
                    / two_var
            })
            .collect();
        let m = neg_q.iter().copied().fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = neg_q.iter().map(|&v| (v - m).exp()).collect();
        let z: T = weights.iter().copied().sum();
        let lse = m + z.ln();

        let pre = own_q + terms.alpha + lse;
        if !pre.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite magnet term for sample {i}"
            )));
        }
        if pre <= T::zero() {
            continue;
        }
        total += pre;
        let g = grads.row_mut(i);
        for d in 0..dim {
            let mut v = own_diff[d] / terms.variance;
            for (mu, &w) in imposters.iter().zip(&weights) {
                v -= (w / z) * (r[d] - mu[d]) / terms.variance;
            }
            g[d] = v * inv_n;
        }
    }
    Ok((total * inv_n, grads))
}

fn check_centroids<T: Scalar>(embeddings: &Tensor<T>, centroids: &[&[T]]) -> Result<usize> {
    if embeddings.rank() != 2 {
        return Err(Error::dim("variance embedding rank", 2, embeddings.rank()));
    }
    let (n, dim) = (embeddings.shape()[0], embeddings.shape()[1]);
    if centroids.len() != n {
        return Err(Error::dim("variance centroid count", n, centroids.len()));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
        return Err(Error::dim("variance centroid dimension", dim, c.len()));
    }
    if n < 2 {
        return Err(Error::Contract(format!(
            "variance needs at least 2 samples, got {n}"
        )));
    }
    Ok(n)
}

/// `(1/(N−1)) Σ ‖r − μ(r)‖²` where `centroids[i]` is row `i`'s centroid.
/// Not floored.
pub fn variance_estimate<T: Scalar>(embeddings: &Tensor<T>, centroids: &[&[T]]) -> Result<T> {
    let n = check_centroids(embeddings, centroids)?;
    let s: T = (0..n)
        .map(|i| {
            embeddings
                .row(i)
                .iter()
                .zip(centroids[i])
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<T>()
        })
        .sum();
    Ok(s / T::from_usize_lossy(n - 1))
}

/// The unsquared-norm variant `(1/(N−1)) Σ ‖r − μ(r)‖`, kept for comparison.
pub fn variance_estimate_literal<T: Scalar>(
    embeddings: &Tensor<T>,
    centroids: &[&[T]],
) -> Result<T> {
    let n = check_centroids(embeddings, centroids)?;
    let s: T = (0..n)
        .map(|i| {
            embeddings
                .row(i)
                .iter()
                .zip(centroids[i])
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<T>()
                .sqrt()
        })
        .sum();
    Ok(s / T::from_usize_lossy(n - 1))
}
