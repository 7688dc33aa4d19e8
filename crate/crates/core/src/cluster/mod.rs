//! Per-class k-means for the magnet loss, imposter-cluster neighborhoods,
//! and PCA for embedding visualization.

mod kmeans;
mod pca;

pub use kmeans::{kmeans, kmeans_restarts, KMeansResult, DEFAULT_MAX_ITERS, DEFAULT_RESTARTS};
pub use pca::{pca_fit, pca_project, PcaModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{variance_estimate, VARIANCE_FLOOR};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId {
    pub class: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassClusters<T> {
    pub class: usize,
    pub centroids: Vec<Vec<T>>,
}

/// K centroids per class, the assignment of every clustered sample, and the
/// global variance σ² (floored).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T> {
    /// Sorted by class id.
    pub classes: Vec<ClassClusters<T>>,
    pub assignments: Vec<ClusterId>,
    pub variance: T,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn class_clusters(&self, class: usize) -> Option<&ClassClusters<T>> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn centroid(&self, id: ClusterId) -> Option<&[T]> {
        self.class_clusters(id.class)
            .and_then(|c| c.centroids.get(id.index))
            .map(Vec::as_slice)
    }

    /// Every cluster id in (class, index) order.
    pub fn cluster_ids(&self) -> Vec<ClusterId> {
        self.classes
            .iter()
            .flat_map(|c| {
                (0..c.centroids.len()).map(move |index| ClusterId {
                    class: c.class,
                    index,
                })
            })
            .collect()
    }

    /// Sample indices assigned to `id`, ascending.
    pub fn members(&self, id: ClusterId) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Runs k-means separately on each class of `embeddings` (rows) and
/// estimates σ² over the resulting assignments.
pub fn refresh_clusters<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<ClusterModel<T>> {
    if embeddings.rank() != 2 || embeddings.shape()[0] != labels.len() {
        return Err(Error::dim(
            "refresh_clusters embedding rows",
            labels.len(),
            embeddings.shape().first().copied().unwrap_or(0),
        ));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut assignments = vec![ClusterId { class: 0, index: 0 }; labels.len()];
    let mut per_class = Vec::with_capacity(classes.len());
    for &class in &classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Contract(format!(
                "class {class} has {} samples, fewer than K = {k}",
                members.len()
            )));
        }
        let points: Vec<Vec<T>> = members
            .iter()
            .map(|&i| embeddings.row(i).to_vec())
            .collect();
        let class_seed = seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let fit = kmeans(&points, k, class_seed, DEFAULT_MAX_ITERS)?;
        for (&i, &a) in members.iter().zip(&fit.assignments) {
            assignments[i] = ClusterId { class, index: a };
        }
        per_class.push(ClassClusters {
            class,
            centroids: fit.centroids,
        });
    }
    let mut model = ClusterModel {
        classes: per_class,
        assignments,
        variance: T::zero(),
    };
    let centroids: Vec<&[T]> = model
        .assignments
        .iter()
        .map(|&id| model.centroid(id).expect("assigned centroid exists"))
        .collect();
    let var = variance_estimate(embeddings, &centroids)?;
    model.variance = var.max(T::lit(VARIANCE_FLOOR));
    Ok(model)
}

/// Imposter clusters nearest to a given cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub ids: Vec<ClusterId>,
    /// Fewer than the requested number of imposters existed.
    pub short: bool,
}

/// The `m` centroids of other classes nearest to `cluster`'s centroid,
/// ascending by Euclidean distance, ties by (class, index).
pub fn nearest_imposter_clusters<T: Scalar>(
    cluster: ClusterId,
    model: &ClusterModel<T>,
    m: usize,
) -> Result<Neighborhood> {
    let centre = model
        .centroid(cluster)
        .ok_or_else(|| Error::Contract(format!("unknown cluster {cluster:?}")))?;
    let mut cands: Vec<(T, ClusterId)> = model
        .cluster_ids()
        .into_iter()
        .filter(|id| id.class != cluster.class)
        .map(|id| (sq_dist(centre, model.centroid(id).expect("listed")), id))
        .collect();
    cands.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.cmp(&b.1))
    });
    let short = cands.len() < m;
    Ok(Neighborhood {
        ids: cands.into_iter().take(m).map(|(_, id)| id).collect(),
        short,
    })
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}
