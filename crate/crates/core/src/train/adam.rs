use crate::error::{Error, Result};
use crate::nn::{Gradients, NetworkModel};
use crate::scalar::Scalar;

/// Adam with bias correction. Moment buffers are allocated on the first
/// step to match the parameter slices they are given.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Updates taken so far.
    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "optimizer parameter groups",
                params.len(),
                grads.len(),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::dim(
                "optimizer state groups",
                self.m.len(),
                params.len(),
            ));
        }
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::dim("optimizer parameter length", m.len(), p.len()));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut NetworkModel<T>, grads: &Gradients<T>) -> Result<()> {
        let params = model
            .params_mut()
            .iter_mut()
            .flatten()
            .map(|t| t.data_mut())
            .collect();
        let gs = grads.layers.iter().flatten().map(|t| t.data()).collect();
        self.step(params, gs)
    }
}
