pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod scalar;
pub mod stream;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{GradPair, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;

pub type Network64 = nn::NetworkModel<f64>;
pub type Network32 = nn::NetworkModel<f32>;
