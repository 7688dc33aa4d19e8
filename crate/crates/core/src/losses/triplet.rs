use super::check_batch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl TripletIndices {
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        if self.anchor >= n || self.positive >= n || self.negative >= n {
            return Err(Error::Contract(format!(
                "triplet {self:?} indexes outside a batch of {n}"
            )));
        }
        if self.anchor == self.positive {
            return Err(Error::Contract(format!(
                "triplet {self:?}: anchor equals positive"
            )));
        }
        if labels[self.anchor] != labels[self.positive] {
            return Err(Error::Contract(format!(
                "triplet {self:?}: positive has a different label"
            )));
        }
        if labels[self.anchor] == labels[self.negative] {
            return Err(Error::Contract(format!(
                "triplet {self:?}: negative shares the anchor label"
            )));
        }
        Ok(())
    }
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// `max(d(A,P) − d(A,N) + margin, 0)` with Euclidean `d`, and its gradient
/// with respect to every row of the batch.
pub fn triplet_loss<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    triplet: TripletIndices,
    margin: T,
) -> Result<(T, Tensor<T>)> {
    check_batch(embeddings, labels)?;
    let mut grads = Tensor::zeros(embeddings.shape());
    let loss = accumulate(embeddings, labels, triplet, margin, T::one(), &mut grads)?;
    Ok((loss, grads))
}

fn accumulate<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    t: TripletIndices,
    margin: T,
    weight: T,
    grads: &mut Tensor<T>,
) -> Result<T> {
    if !(margin > T::zero()) {
        return Err(Error::Contract(format!(
            "margin must be positive, got {margin}"
        )));
    }
    t.validate(labels)?;
    let a = embeddings.row(t.anchor);
    let p = embeddings.row(t.positive);
    let n = embeddings.row(t.negative);
    let d_ap = dist(a, p);
    let d_an = dist(a, n);
    let pre = d_ap - d_an + margin;
    if pre <= T::zero() {
        return Ok(T::zero());
    }
    let dim = a.len();
    // Unit directions; the subgradient of a zero distance is the zero vector.
    let u_ap: Vec<T> = (0..dim)
        .map(|i| {
            if d_ap > T::zero() {
                (a[i] - p[i]) / d_ap
            } else {
                T::zero()
            }
        })
        .collect();
    let u_an: Vec<T> = (0..dim)
        .map(|i| {
            if d_an > T::zero() {
                (a[i] - n[i]) / d_an
            } else {
                T::zero()
            }
        })
        .collect();
    for i in 0..dim {
        grads.row_mut(t.anchor)[i] += weight * (u_ap[i] - u_an[i]);
        grads.row_mut(t.positive)[i] -= weight * u_ap[i];
        grads.row_mut(t.negative)[i] += weight * u_an[i];
    }
    Ok(pre)
}

/// Mean triplet loss over `triplets` (zero with zero gradient when empty).
pub fn triplet_batch_loss<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    triplets: &[TripletIndices],
    margin: T,
) -> Result<(T, Tensor<T>)> {
    check_batch(embeddings, labels)?;
    let mut grads = Tensor::zeros(embeddings.shape());
    if triplets.is_empty() {
        return Ok((T::zero(), grads));
    }
    let w = T::one() / T::from_usize_lossy(triplets.len());
    let mut total = T::zero();
    for &t in triplets {
        total += accumulate(embeddings, labels, t, margin, w, &mut grads)?;
    }
    Ok((total * w, grads))
}

/// For each ordered same-class (anchor, positive) pair, picks the closest
/// negative with `d(A,P) < d(A,N) < d(A,P) + margin`. Without one, falls back
/// to the farthest negative with `d(A,N) <= d(A,P)`; otherwise the pair is
/// skipped. Ties go to the lowest batch index.
pub fn mine_semi_hard<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    margin: T,
) -> Result<Vec<TripletIndices>> {
    check_batch(embeddings, labels)?;
    let n = labels.len();
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(embeddings.row(i), embeddings.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = d[a * n + p];
            let mut semi: Option<(usize, T)> = None;
            let mut fallback: Option<(usize, T)> = None;
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                let d_an = d[a * n + neg];
                if d_an > d_ap && d_an < d_ap + margin {
                    if semi.map_or(true, |(_, best)| d_an < best) {
                        semi = Some((neg, d_an));
                    }
                } else if d_an <= d_ap && fallback.map_or(true, |(_, best)| d_an > best) {
                    fallback = Some((neg, d_an));
                }
            }
            if let Some((negative, _)) = semi.or(fallback) {
                out.push(TripletIndices {
                    anchor: a,
                    positive: p,
                    negative,
                });
            }
        }
    }
    Ok(out)
}
