use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// Orthonormal principal directions, strongest first. The first
    /// non-negligible component of each is positive.
    pub directions: Vec<Vec<T>>,
    /// Explained variances, nonincreasing.
    pub variances: Vec<T>,
    /// Data had (numerically) zero variance; directions are an arbitrary basis.
    pub degenerate: bool,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n×n).
/// Returns eigenvalues and eigenvectors as columns of the second matrix.
fn jacobi_eigen<T: Scalar>(mut a: Vec<T>, n: usize) -> (Vec<T>, Vec<T>) {
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += a[i * n + i] * a[i * n + i];
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

/// Fits the top-`m` principal components of the rows of `data`.
pub fn pca_fit<T: Scalar>(data: &Tensor<T>, m: usize) -> Result<PcaModel<T>> {
    if data.rank() != 2 {
        return Err(Error::dim("pca data rank", 2, data.rank()));
    }
    let (n, d) = (data.shape()[0], data.shape()[1]);
    if n < 2 {
        return Err(Error::Contract(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    if m == 0 || m > d {
        return Err(Error::Contract(format!(
            "PCA components {m} outside 1..={d}"
        )));
    }
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (mu, &x) in mean.iter_mut().zip(data.row(i)) {
            *mu += x;
        }
    }
    let nn = T::from_usize_lossy(n);
    mean.iter_mut().for_each(|mu| *mu /= nn);
    let mut cov = vec![T::zero(); d * d];
    let mut centred = vec![T::zero(); d];
    for i in 0..n {
        for ((c, &x), &mu) in centred.iter_mut().zip(data.row(i)).zip(&mean) {
            *c = x - mu;
        }
        for a in 0..d {
            let ca = centred[a];
            if ca == T::zero() {
                continue;
            }
            for b in a..d {
                cov[a * d + b] += ca * centred[b];
            }
        }
    }
    let denom = T::from_usize_lossy(n - 1);
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let scale = (0..d).map(|i| cov[i * d + i]).fold(T::zero(), T::max);
    let (eig, vecs) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig[j]
            .partial_cmp(&eig[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let degenerate = scale <= T::zero() || !scale.is_finite();
    let tiny = T::lit(1e-10);
    let mut directions = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for (rank, &col) in order.iter().take(m).enumerate() {
        let mut dir: Vec<T> = if degenerate {
            (0..d)
                .map(|r| if r == rank { T::one() } else { T::zero() })
                .collect()
        } else {
            (0..d).map(|r| vecs[r * d + col]).collect()
        };
        if let Some(first) = dir.iter().copied().find(|v| v.abs() > tiny) {
            if first < T::zero() {
                dir.iter_mut().for_each(|v| *v = -*v);
            }
        }
        directions.push(dir);
        variances.push(if degenerate {
            T::zero()
        } else {
            eig[col].max(T::zero())
        });
    }
    Ok(PcaModel {
        mean,
        directions,
        variances,
        degenerate,
    })
}

pub fn pca_project<T: Scalar>(model: &PcaModel<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != model.mean.len() {
        return Err(Error::dim("pca input dimension", model.mean.len(), x.len()));
    }
    Ok(model
        .directions
        .iter()
        .map(|d| {
            d.iter()
                .zip(x)
                .zip(&model.mean)
                .map(|((&w, &v), &mu)| w * (v - mu))
                .sum()
        })
        .collect())
}
