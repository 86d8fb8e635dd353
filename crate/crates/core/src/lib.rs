//! Text-classification toolkit: a from-scratch transformer encoder with
//! reverse-mode autodiff, WordPiece tokenization, a columnar annotation
//! pipeline with partitioned execution, two training regimes and a
//! comparison harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common single-precision instantiations.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod telemetry;
pub mod tensor;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ParamSet = params::ParamSet<f32>;
pub type EncoderWeights = encoder::EncoderWeights<f32>;
pub type SoftmaxHead = train::SoftmaxHead<f32>;
pub type MlpHead = train::MlpHead<f32>;
pub type TrainedModel = train::TrainedModel<f32>;
