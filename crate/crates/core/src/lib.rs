//! Stereo matching with LiDAR fusion: input fusion, conditional cost volume
//! normalization (categorical, continuous, hierarchical), the ablation
//! baselines, metrics, and the training / evaluation harnesses.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the two concrete instantiations.

pub mod conditioning;
pub mod cost_volume;
pub mod data;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod network;
pub mod numerics;
pub mod scalar;
pub mod trainer_eval;

pub use error::{Error, Result};
pub use numerics::Tensor;
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
