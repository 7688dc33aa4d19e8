use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network. Convolutions are unpadded with
/// stride 1; pools are non-overlapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Declares the network input shape; always the first layer.
    Input {
        shape: Vec<usize>,
    },
    Reshape {
        shape: Vec<usize>,
    },
    /// Swaps the two axes of a rank-2 activation.
    Transpose,
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
    },
    MaxPool1d {
        pool: usize,
    },
    MaxPool2d {
        pool: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        units: usize,
    },
    Relu,
    Sigmoid,
    Softmax,
    Dropout {
        p: f64,
    },
    /// Scales a vector to unit Euclidean norm.
    L2Normalize,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Transpose => "transpose",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::L2Normalize => "l2norm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::Contract(format!(
                    "{} {what} must be positive",
                    self.name()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Input { shape } | LayerSpec::Reshape { shape } => {
                if shape.is_empty() {
                    return Err(Error::Contract(format!("{} shape is empty", self.name())));
                }
                shape.iter().try_for_each(|&e| positive("extent", e))
            }
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            }
            | LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => {
                positive("in_channels", *in_channels)?;
                positive("filters", *filters)?;
                positive("kernel", *kernel)
            }
            LayerSpec::MaxPool1d { pool } | LayerSpec::MaxPool2d { pool } => {
                positive("pool", *pool)
            }
            LayerSpec::Dense { inputs, units } => {
                positive("inputs", *inputs)?;
                positive("units", *units)
            }
            LayerSpec::Dropout { p } => {
                if (0.0..1.0).contains(p) {
                    Ok(())
                } else {
                    Err(Error::Contract(format!(
                        "dropout probability {p} outside [0, 1)"
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let rank = |r: usize| {
            if input.len() != r {
                Err(Error::dim(
                    format!("{} input rank", self.name()),
                    r,
                    input.len(),
                ))
            } else {
                Ok(())
            }
        };
        let numel: usize = input.iter().product();
        match self {
            LayerSpec::Input { shape } => {
                if input != shape.as_slice() {
                    return Err(Error::Contract(format!(
                        "input shape {input:?} does not match declared {shape:?}"
                    )));
                }
                Ok(shape.clone())
            }
            LayerSpec::Reshape { shape } => {
                let n: usize = shape.iter().product();
                if n != numel {
                    return Err(Error::dim("reshape element count", n, numel));
                }
                Ok(shape.clone())
            }
            LayerSpec::Transpose => {
                rank(2)?;
                Ok(vec![input[1], input[0]])
            }
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            } => {
                rank(2)?;
                if input[0] != *in_channels {
                    return Err(Error::dim("conv1d input channels", *in_channels, input[0]));
                }
                if input[1] < *kernel {
                    return Err(Error::dim(
                        "conv1d length (must be >= kernel)",
                        *kernel,
                        input[1],
                    ));
                }
                Ok(vec![*filters, input[1] - kernel + 1])
            }
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => {
                rank(3)?;
                if input[0] != *in_channels {
                    return Err(Error::dim("conv2d input channels", *in_channels, input[0]));
                }
                for (axis, &e) in input.iter().enumerate().skip(1) {
                    if e < *kernel {
                        return Err(Error::dim(
                            format!("conv2d axis {axis} (must be >= kernel)"),
                            *kernel,
                            e,
                        ));
                    }
                }
                Ok(vec![*filters, input[1] - kernel + 1, input[2] - kernel + 1])
            }
            LayerSpec::MaxPool1d { pool } => {
                rank(2)?;
                if input[1] < *pool {
                    return Err(Error::dim(
                        "maxpool1d length (must be >= pool)",
                        *pool,
                        input[1],
                    ));
                }
                Ok(vec![input[0], input[1] / pool])
            }
            LayerSpec::MaxPool2d { pool } => {
                rank(3)?;
                if input[1] < *pool || input[2] < *pool {
                    return Err(Error::dim(
                        "maxpool2d spatial extent (must be >= pool)",
                        *pool,
                        input[1].min(input[2]),
                    ));
                }
                Ok(vec![input[0], input[1] / pool, input[2] / pool])
            }
            LayerSpec::Flatten => Ok(vec![numel]),
            LayerSpec::Dense { inputs, units } => {
                rank(1)?;
                if input[0] != *inputs {
                    return Err(Error::dim("dense input features", *inputs, input[0]));
                }
                Ok(vec![*units])
            }
            LayerSpec::L2Normalize => {
                rank(1)?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu
            | LayerSpec::Sigmoid
            | LayerSpec::Softmax
            | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Shapes of the trainable tensors (weights first, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            } => vec![vec![filters, in_channels, kernel], vec![filters]],
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => vec![vec![filters, in_channels, kernel, kernel], vec![filters]],
            LayerSpec::Dense { inputs, units } => vec![vec![units, inputs], vec![units]],
            _ => Vec::new(),
        }
    }

    /// Number of inputs feeding one output unit, used by the init bound.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel),
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            LayerSpec::Dense { inputs, .. } => Some(inputs),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_probability_range() {
        assert!(LayerSpec::Dropout { p: 0.0 }.validate().is_ok());
        assert!(LayerSpec::Dropout { p: 0.1 }.validate().is_ok());
        assert!(LayerSpec::Dropout { p: 1.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { p: -0.1 }.validate().is_err());
    }

    #[test]
    fn conv_shapes() {
        let c = LayerSpec::Conv2d {
            in_channels: 1,
            filters: 64,
            kernel: 4,
        };
        assert_eq!(c.output_shape(&[1, 28, 28]).unwrap(), vec![64, 25, 25]);
        assert!(c.output_shape(&[2, 28, 28]).is_err());
        assert_eq!(
            LayerSpec::MaxPool2d { pool: 2 }
                .output_shape(&[64, 25, 25])
                .unwrap(),
            vec![64, 12, 12]
        );
        assert_eq!(c.fan_in(), Some(16));
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(LayerSpec::Dense {
            inputs: 0,
            units: 3
        }
        .validate()
        .is_err());
        assert!(LayerSpec::MaxPool1d { pool: 0 }.validate().is_err());
        assert!(LayerSpec::Input { shape: vec![] }.validate().is_err());
    }
}
