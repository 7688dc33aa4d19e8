//! Central finite-difference gradient checking.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares the analytic gradient returned by `f` against central
/// differences on every coordinate of `x`. Returns the maximum of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// Same as [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_coords<T, F>(f: F, x: &Tensor<T>, eps: T, coords: &[usize]) -> Result<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("f(x) is not finite: {value}")));
    }
    x.check_same_shape(&analytic, "analytic gradient")?;
    let floor = T::lit(1e-12);
    let two = T::lit(2.0);
    let mut probe = x.clone();
    let mut worst = T::zero();
    for &i in coords {
        if i >= x.len() {
            return Err(Error::dim("grad_check coordinate", x.len(), i));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Evaluation(format!(
                "f is not finite near coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (two * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
