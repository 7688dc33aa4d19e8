//! Sequential networks: the three embedding architectures, the classifier
//! head, initialization, dropout and checkpointing.

mod checkpoint;
mod layer;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load, read_checkpoint, save, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layer::LayerSpec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    self, conv1d, conv1d_backward_into, conv2d, conv2d_backward_into, dense, dense_backward_into,
    maxpool, maxpool_backward, ArgmaxIndices, Tensor,
};

/// Side length of the square proprioception window (time steps and features).
pub const WINDOW: usize = 28;
pub const EMBEDDING_DIM: usize = 64;
pub const NUM_CLASSES: usize = 3;

/// Whether dropout is active. Training dropout masks are drawn from a
/// ChaCha stream seeded by `dropout_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    FaceNet,
    Conv2DNet,
    Conv1DNet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::FaceNet, Arch::Conv2DNet, Arch::Conv1DNet];

    pub fn build<T: Scalar>(self) -> NetworkModel<T> {
        match self {
            Arch::FaceNet => build_facenet(),
            Arch::Conv2DNet => build_conv2dnet(),
            Arch::Conv1DNet => build_conv1dnet(),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Arch::FaceNet => "facenet",
            Arch::Conv2DNet => "conv2dnet",
            Arch::Conv1DNet => "conv1dnet",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Arch::FaceNet => "FaceNet",
            Arch::Conv2DNet => "Conv2DNet",
            Arch::Conv1DNet => "Conv1DNet",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "facenet" => Ok(Arch::FaceNet),
            "conv2dnet" => Ok(Arch::Conv2DNet),
            "conv1dnet" => Ok(Arch::Conv1DNet),
            _ => Err(Error::Input(format!("unknown architecture `{s}`"))),
        }
    }
}

/// An ordered layer list with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T> {
    specs: Vec<LayerSpec>,
    params: Vec<Vec<Tensor<T>>>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Vec<usize>>,
}

/// Per-layer parameter gradients, laid out like [`NetworkModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &NetworkModel<T>) -> Self {
        Self {
            layers: model
                .params
                .iter()
                .map(|ps| ps.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y)?;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.layers.iter_mut().flatten().for_each(|t| t.scale(k));
    }

    pub fn reset(&mut self) {
        self.layers
            .iter_mut()
            .flatten()
            .for_each(|t| t.fill(T::zero()));
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(Tensor::is_finite)
    }
}

enum Cache<T> {
    None,
    Input(Tensor<T>),
    Pool {
        input_shape: Vec<usize>,
        argmax: ArgmaxIndices,
    },
    Output(Tensor<T>),
    Mask(Vec<T>),
    Norm {
        output: Tensor<T>,
        norm: T,
    },
}

/// Cached forward state needed to run [`NetworkModel::backward`].
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds a network with zeroed parameters. The first layer must be
    /// [`LayerSpec::Input`] and every layer's shapes must chain.
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self> {
        let input = match specs.first() {
            Some(LayerSpec::Input { shape }) => shape.clone(),
            _ => return Err(Error::Contract("first layer must be an input layer".into())),
        };
        let mut shapes = vec![input];
        for (i, spec) in specs.iter().enumerate() {
            if i > 0 && matches!(spec, LayerSpec::Input { .. }) {
                return Err(Error::Contract(format!("input layer at position {i}")));
            }
            let next = spec.output_shape(shapes.last().expect("nonempty"))?;
            shapes.push(next);
        }
        let params = specs
            .iter()
            .map(|s| {
                s.param_shapes()
                    .iter()
                    .map(|sh| Tensor::zeros(sh))
                    .collect()
            })
            .collect();
        Ok(Self {
            specs,
            params,
            shapes,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Vec<Tensor<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor<T>>] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().expect("nonempty").iter().product()
    }

    /// Input shape of every layer followed by the network output shape.
    pub fn shape_trace(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Replaces all parameters, checking their shapes.
    pub fn set_params(&mut self, params: Vec<Vec<Tensor<T>>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim(
                "parameter layer count",
                self.params.len(),
                params.len(),
            ));
        }
        for (old, new) in self.params.iter().zip(&params) {
            if old.len() != new.len() {
                return Err(Error::dim("parameter tensor count", old.len(), new.len()));
            }
            for (a, b) in old.iter().zip(new) {
                a.check_same_shape(b, "parameter")?;
            }
        }
        self.params = params;
        Ok(())
    }

    /// He-style uniform initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, ps) in self.specs.iter().zip(self.params.iter_mut()) {
            let Some(fan_in) = spec.fan_in() else {
                continue;
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in ps[0].data_mut() {
                *v = T::lit(dist.sample(&mut rng));
            }
            ps[1].fill(T::zero());
        }
    }

    pub fn initialized(mut self, seed: u64) -> Self {
        self.init_params(seed);
        self
    }

    /// Appends `head` (minus its input layer) after this network.
    pub fn compose(&self, head: &NetworkModel<T>) -> Result<Self> {
        let out = self.shapes.last().expect("nonempty");
        if head.input_shape() != out.as_slice() {
            return Err(Error::dim(
                "composed head input",
                out.iter().product(),
                head.input_shape().iter().product(),
            ));
        }
        let mut specs = self.specs.clone();
        specs.extend(head.specs[1..].iter().cloned());
        let mut model = Self::new(specs)?;
        let mut params = self.params.clone();
        params.extend(head.params[1..].iter().cloned());
        model.set_params(params)?;
        Ok(model)
    }

    /// Index of the first layer of the trailing head, given the layer count of the head.
    pub fn split(&self, embedding_layers: usize) -> Result<(Self, Self)> {
        if embedding_layers == 0 || embedding_layers >= self.specs.len() {
            return Err(Error::Contract(format!(
                "cannot split {} layers at {embedding_layers}",
                self.specs.len()
            )));
        }
        let mut a = Self::new(self.specs[..embedding_layers].to_vec())?;
        a.set_params(self.params[..embedding_layers].to_vec())?;
        let mut head_specs = vec![LayerSpec::Input {
            shape: self.shapes[embedding_layers].clone(),
        }];
        head_specs.extend(self.specs[embedding_layers..].iter().cloned());
        let mut b = Self::new(head_specs)?;
        let mut head_params = vec![Vec::new()];
        head_params.extend(self.params[embedding_layers..].iter().cloned());
        b.set_params(head_params)?;
        Ok((a, b))
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.run(input, mode, self.specs.len(), false)?.0)
    }

    /// Forward pass keeping the caches needed by [`Self::backward`].
    pub fn forward_trace(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Trace<T>)> {
        let (out, trace) = self.run(input, mode, self.specs.len(), true)?;
        Ok((out, trace.expect("trace requested")))
    }

    /// Like [`Self::forward_trace`] but stops before a trailing softmax, so
    /// the output is the logits vector.
    pub fn forward_logits_trace(
        &self,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        let n = match self.specs.last() {
            Some(LayerSpec::Softmax) => self.specs.len() - 1,
            _ => self.specs.len(),
        };
        let (out, trace) = self.run(input, mode, n, true)?;
        Ok((out, trace.expect("trace requested")))
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        layers: usize,
        keep: bool,
    ) -> Result<(Tensor<T>, Option<Trace<T>>)> {
        if input.shape() != self.input_shape() {
            return Err(Error::dim(
                format!(
                    "network input (expected shape {:?}, got {:?})",
                    self.input_shape(),
                    input.shape()
                ),
                self.input_shape().iter().product(),
                input.len(),
            ));
        }
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Infer => None,
        };
        let mut caches = Vec::with_capacity(if keep { layers } else { 0 });
        let mut x = input.clone();
        for i in 0..layers {
            let spec = &self.specs[i];
            let ps = &self.params[i];
            let (y, cache) = match spec {
                LayerSpec::Input { .. } => (x, Cache::None),
                LayerSpec::Reshape { shape } => (x.reshape(shape)?, Cache::None),
                LayerSpec::Flatten => {
                    let n = x.len();
                    (x.reshape(&[n])?, Cache::None)
                }
                LayerSpec::Transpose => (x.transpose2()?, Cache::None),
                LayerSpec::Conv1d { .. } => {
                    let y = conv1d(&x, &ps[0], &ps[1], 1)?;
                    (y, if keep { Cache::Input(x) } else { Cache::None })
                }
                LayerSpec::Conv2d { .. } => {
                    let y = conv2d(&x, &ps[0], &ps[1], 1)?;
                    (y, if keep { Cache::Input(x) } else { Cache::None })
                }
                LayerSpec::Dense { .. } => {
                    let y = dense(&x, &ps[0], &ps[1])?;
                    (y, if keep { Cache::Input(x) } else { Cache::None })
                }
                LayerSpec::MaxPool1d { pool } | LayerSpec::MaxPool2d { pool } => {
                    let (y, argmax) = maxpool(&x, *pool)?;
                    let c = if keep {
                        Cache::Pool {
                            input_shape: x.shape().to_vec(),
                            argmax,
                        }
                    } else {
                        Cache::None
                    };
                    (y, c)
                }
                LayerSpec::Relu => {
                    let y = tensor::relu(&x);
                    (y, if keep { Cache::Input(x) } else { Cache::None })
                }
                LayerSpec::Sigmoid => {
                    let y = tensor::sigmoid(&x);
                    let c = if keep {
                        Cache::Output(y.clone())
                    } else {
                        Cache::None
                    };
                    (y, c)
                }
                LayerSpec::Softmax => {
                    let y = tensor::softmax(&x);
                    let c = if keep {
                        Cache::Output(y.clone())
                    } else {
                        Cache::None
                    };
                    (y, c)
                }
                LayerSpec::Dropout { p } => match rng.as_mut() {
                    Some(rng) if *p > 0.0 => {
                        let keep_scale = T::lit(1.0 / (1.0 - p));
                        let mask: Vec<T> = (0..x.len())
                            .map(|_| {
                                if rng.gen::<f64>() < *p {
                                    T::zero()
                                } else {
                                    keep_scale
                                }
                            })
                            .collect();
                        let mut y = x;
                        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        (y, if keep { Cache::Mask(mask) } else { Cache::None })
                    }
                    _ => (x, Cache::None),
                },
                LayerSpec::L2Normalize => {
                    let norm = x
                        .data()
                        .iter()
                        .map(|&v| v * v)
                        .sum::<T>()
                        .sqrt()
                        .max(T::lit(1e-12));
                    let y = x.map(|v| v / norm);
                    let c = if keep {
                        Cache::Norm {
                            output: y.clone(),
                            norm,
                        }
                    } else {
                        Cache::None
                    };
                    (y, c)
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        Ok((x, keep.then_some(Trace { caches })))
    }

    /// Backpropagates `upstream` through the traced layers, accumulating
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let n = trace.caches.len();
        let out_shape = &self.shapes[n];
        if upstream.shape() != out_shape.as_slice() {
            return Err(Error::dim(
                "backward upstream",
                out_shape.iter().product(),
                upstream.len(),
            ));
        }
        let mut g = upstream.clone();
        for i in (0..n).rev() {
            let spec = &self.specs[i];
            let ps = &self.params[i];
            let in_shape = &self.shapes[i];
            g = match (spec, &trace.caches[i]) {
                (LayerSpec::Input { .. }, _) => g,
                (LayerSpec::Reshape { .. } | LayerSpec::Flatten, _) => g.reshape(in_shape)?,
                (LayerSpec::Transpose, _) => g.transpose2()?,
                (LayerSpec::Conv1d { .. }, Cache::Input(x)) => {
                    let (gw, gb) = split_pair(&mut grads.layers[i]);
                    conv1d_backward_into(x, &ps[0], 1, &g, gw, gb)?
                }
                (LayerSpec::Conv2d { .. }, Cache::Input(x)) => {
                    let (gw, gb) = split_pair(&mut grads.layers[i]);
                    conv2d_backward_into(x, &ps[0], 1, &g, gw, gb)?
                }
                (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                    let (gw, gb) = split_pair(&mut grads.layers[i]);
                    dense_backward_into(x, &ps[0], &g, gw, gb)?
                }
                (
                    LayerSpec::MaxPool1d { .. } | LayerSpec::MaxPool2d { .. },
                    Cache::Pool {
                        input_shape,
                        argmax,
                    },
                ) => maxpool_backward(input_shape, argmax, &g)?,
                (LayerSpec::Relu, Cache::Input(x)) => tensor::relu_backward(x, &g)?,
                (LayerSpec::Sigmoid, Cache::Output(y)) => tensor::sigmoid_backward(y, &g)?,
                (LayerSpec::Softmax, Cache::Output(y)) => tensor::softmax_backward(y, &g)?,
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                    let mut g = g;
                    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    g
                }
                (LayerSpec::Dropout { .. }, Cache::None) => g,
                (LayerSpec::L2Normalize, Cache::Norm { output, norm }) => {
                    let dot: T = g
                        .data()
                        .iter()
                        .zip(output.data())
                        .map(|(&a, &b)| a * b)
                        .sum();
                    let mut gi = g;
                    for (v, &y) in gi.data_mut().iter_mut().zip(output.data()) {
                        *v = (*v - y * dot) / *norm;
                    }
                    gi
                }
                _ => {
                    return Err(Error::Contract(format!(
                        "missing forward cache for layer {i} ({})",
                        spec.name()
                    )))
                }
            };
        }
        Ok(g)
    }
}

fn split_pair<T>(v: &mut [Tensor<T>]) -> (&mut Tensor<T>, &mut Tensor<T>) {
    let (a, b) = v.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn dense_block(specs: &mut Vec<LayerSpec>, inputs: usize, units: usize) {
    specs.push(LayerSpec::Dense { inputs, units });
    specs.push(LayerSpec::Relu);
}

/// Flatten, then dense 128 → 128 → 64 with ReLU and dropout 0.1 on the hidden layers.
pub fn build_facenet<T: Scalar>() -> NetworkModel<T> {
    let mut specs = vec![
        LayerSpec::Input {
            shape: vec![WINDOW, WINDOW],
        },
        LayerSpec::Flatten,
    ];
    dense_block(&mut specs, WINDOW * WINDOW, 128);
    specs.push(LayerSpec::Dropout { p: 0.1 });
    dense_block(&mut specs, 128, 128);
    specs.push(LayerSpec::Dropout { p: 0.1 });
    specs.push(LayerSpec::Dense {
        inputs: 128,
        units: EMBEDDING_DIM,
    });
    NetworkModel::new(specs).expect("facenet layer list is consistent")
}

/// The window as a one-channel image: two conv(4)/pool(2) stages
/// (28 → 25 → 12 → 9 → 4), then dense 400 → 128 → 64.
pub fn build_conv2dnet<T: Scalar>() -> NetworkModel<T> {
    let specs = vec![
        LayerSpec::Input {
            shape: vec![WINDOW, WINDOW],
        },
        LayerSpec::Reshape {
            shape: vec![1, WINDOW, WINDOW],
        },
        LayerSpec::Conv2d {
            in_channels: 1,
            filters: 64,
            kernel: 4,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { pool: 2 },
        LayerSpec::Conv2d {
            in_channels: 64,
            filters: 128,
            kernel: 4,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { pool: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 2048,
            units: 400,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 400,
            units: 128,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 128,
            units: EMBEDDING_DIM,
        },
    ];
    NetworkModel::new(specs).expect("conv2dnet layer list is consistent")
}

/// Features as channels, time as length: conv(3)/pool(2) then conv(4)/pool(2)
/// (28 → 26 → 13 → 10 → 5), then dense 256 → 64.
pub fn build_conv1dnet<T: Scalar>() -> NetworkModel<T> {
    let specs = vec![
        LayerSpec::Input {
            shape: vec![WINDOW, WINDOW],
        },
        LayerSpec::Transpose,
        LayerSpec::Conv1d {
            in_channels: WINDOW,
            filters: 256,
            kernel: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d { pool: 2 },
        LayerSpec::Conv1d {
            in_channels: 256,
            filters: 128,
            kernel: 4,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d { pool: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 640,
            units: 256,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 256,
            units: EMBEDDING_DIM,
        },
    ];
    NetworkModel::new(specs).expect("conv1dnet layer list is consistent")
}

/// Dense 64 → 32 → 3 with a softmax output.
pub fn build_classifier<T: Scalar>() -> NetworkModel<T> {
    let specs = vec![
        LayerSpec::Input {
            shape: vec![EMBEDDING_DIM],
        },
        LayerSpec::Dense {
            inputs: EMBEDDING_DIM,
            units: 32,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 32,
            units: NUM_CLASSES,
        },
        LayerSpec::Softmax,
    ];
    NetworkModel::new(specs).expect("classifier layer list is consistent")
}

/// Appends an L2-normalization layer to an embedding network.
pub fn with_l2_normalization<T: Scalar>(model: &NetworkModel<T>) -> Result<NetworkModel<T>> {
    let mut specs = model.specs().to_vec();
    specs.push(LayerSpec::L2Normalize);
    let mut out = NetworkModel::new(specs)?;
    let mut params = model.params().to_vec();
    params.push(Vec::new());
    out.set_params(params)?;
    Ok(out)
}
