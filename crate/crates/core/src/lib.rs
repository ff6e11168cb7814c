//! Spatio-temporal recurrent models for downscaling coarse weather fields
//! to daily gridded rainfall.

pub mod autograd;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod tensor;

pub use autograd::{Graph, ParamId, ParamStore, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
