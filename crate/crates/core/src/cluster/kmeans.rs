use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sq_dist;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITERS: usize = 100;
/// Independent k-means++ starts per call; the lowest-inertia run is kept.
pub const DEFAULT_RESTARTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares of the final assignment.
    pub inertia: T,
    /// Lloyd iterations run after seeding.
    pub iterations: usize,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<T>,
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>]) -> (Vec<usize>, T) {
    let mut total = T::zero();
    let a = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(p, centroids);
            total += d;
            j
        })
        .collect();
    (a, total)
}

fn plus_plus_seed<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]).to_f64_lossy())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c).to_f64_lossy());
        }
        centroids.push(c);
    }
    centroids
}

fn update<T: Scalar>(points: &[Vec<T>], assignments: &[usize], old: &[Vec<T>]) -> Vec<Vec<T>> {
    let k = old.len();
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut taken = vec![false; points.len()];
    for j in 0..k {
        if counts[j] > 0 {
            let n = T::from_usize_lossy(counts[j]);
            sums[j].iter_mut().for_each(|s| *s /= n);
            continue;
        }
        // Empty cluster: reseed at the point farthest from its own centroid.
        let mut best: Option<(usize, T)> = None;
        for (i, (p, &a)) in points.iter().zip(assignments).enumerate() {
            if taken[i] {
                continue;
            }
            let d = sq_dist(p, &old[a]);
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => {
                taken[i] = true;
                sums[j] = points[i].clone();
            }
            None => sums[j] = old[j].clone(),
        }
    }
    sums
}

/// Lloyd's algorithm with k-means++ seeding, best of [`DEFAULT_RESTARTS`]
/// starts. Each start stops at an assignment fixpoint or after `max_iters`
/// iterations; deterministic given `seed`.
pub fn kmeans<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult<T>> {
    kmeans_restarts(points, k, seed, max_iters, DEFAULT_RESTARTS)
}

/// [`kmeans`] with an explicit number of starts (at least one). Ties in
/// inertia keep the earliest start.
pub fn kmeans_restarts<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult<T>> {
    if k == 0 {
        return Err(Error::Contract("k-means needs K >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::Contract(format!(
            "k-means needs at least K = {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dim("k-means point dimension", dim, bad.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = lloyd(points, k, max_iters, &mut rng);
    for _ in 1..restarts {
        let run = lloyd(points, k, max_iters, &mut rng);
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> KMeansResult<T> {
    let mut centroids = plus_plus_seed(points, k, rng);
    let (mut assignments, inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        centroids = update(points, &assignments, &centroids);
        let (next, inertia) = assign(points, &centroids);
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansResult {
        inertia: *history.last().expect("nonempty"),
        centroids,
        assignments,
        iterations,
        inertia_history: history,
    }
}
