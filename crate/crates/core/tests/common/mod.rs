#![allow(dead_code)]

pub mod oracles;

use cdml_core::data::{Label5, SensorWindow};
use cdml_core::train::TrainData;
use cdml_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Three Gaussian blobs in an 8-d latent space, rendered as 28×28 windows
/// through a fixed random linear map. Centres sit `sep` apart on the axes.
pub fn blob_windows(
    n_per_class: usize,
    sep: f64,
    noise: f64,
    seed: u64,
) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = 8;
    let basis: Vec<f64> = (0..latent * 784)
        .map(|_| rng.gen_range(-1.0..1.0) / (latent as f64).sqrt())
        .collect();
    let z = Normal::new(0.0, noise).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..3 * n_per_class {
        let c = i % 3;
        let mut h = vec![0.0; latent];
        h[c] = sep;
        for v in &mut h {
            *v += z.sample(&mut rng);
        }
        xs.push(Tensor::from_fn(&[28, 28], |p| {
            (0..latent).map(|k| h[k] * basis[k * 784 + p]).sum()
        }));
        ys.push(c);
    }
    (xs, ys)
}

/// Windows whose class sits in three tight latent directions while five
/// class-free directions of unit scale carry most of the variance. The
/// classes are separable, but input-space distances are dominated by the
/// nuisance.
pub fn buried_windows(n_per_class: usize, seed: u64) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = 8;
    let basis: Vec<f64> = (0..latent * 784)
        .map(|_| rng.gen_range(-1.0..1.0) / (latent as f64).sqrt())
        .collect();
    let tight = Normal::new(0.0, 0.1).unwrap();
    let wide = Normal::new(0.0, 1.0).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..3 * n_per_class {
        let c = i % 3;
        let h: Vec<f64> = (0..latent)
            .map(|k| match k {
                0..=2 => f64::from(u8::from(k == c)) + tight.sample(&mut rng),
                _ => wide.sample(&mut rng),
            })
            .collect();
        xs.push(Tensor::from_fn(&[28, 28], |p| {
            (0..latent).map(|k| h[k] * basis[k * 784 + p]).sum()
        }));
        ys.push(c);
    }
    (xs, ys)
}

/// Blob train/test sets drawn from the same distribution.
pub fn blob_data<T: cdml_core::Scalar>(n_train: usize, n_test: usize, seed: u64) -> TrainData<T> {
    let (xs, ys) = blob_windows(n_train + n_test, 3.0, 0.3, seed);
    let cut = 3 * n_train;
    let cast = |v: &[Tensor<f64>]| v.iter().map(|t| t.cast::<T>()).collect::<Vec<_>>();
    TrainData::new(
        cast(&xs[..cut]),
        ys[..cut].to_vec(),
        cast(&xs[cut..]),
        ys[cut..].to_vec(),
    )
    .unwrap()
}

/// Smallest distance between class centroids over the mean distance of
/// samples to their own centroid.
pub fn separation_ratio(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let dim = points[0].len();
    let mut cent = vec![vec![0.0; dim]; k];
    let mut n = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        n[l] += 1;
        for d in 0..dim {
            cent[l][d] += p[d];
        }
    }
    for c in 0..k {
        cent[c].iter_mut().for_each(|v| *v /= n[c] as f64);
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let intra = points
        .iter()
        .zip(labels)
        .map(|(p, &l)| dist(p, &cent[l]))
        .sum::<f64>()
        / points.len() as f64;
    let mut inter = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            inter = inter.min(dist(&cent[a], &cent[b]));
        }
    }
    inter / intra
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

/// Wraps bare 28×28 tensors as windows, one single-window record each.
pub fn as_windows(xs: &[Tensor<f64>], ys: &[usize]) -> Vec<SensorWindow> {
    const L5: [Label5; 3] = [
        Label5::NonContact,
        Label5::IntentionalL5,
        Label5::IncidentalL5,
    ];
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (x, &y))| SensorWindow {
            id: format!("blob-{i}/0"),
            record_id: format!("blob-{i}"),
            start_frame: 0,
            timestamps: (0..28).map(|t| t as f64 * 0.005).collect(),
            matrix: x.data().to_vec(),
            label5: L5[y],
            label3: L5[y].label3(),
        })
        .collect()
}
