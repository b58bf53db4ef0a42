//! Key-seeded input transforms that hide a classifier's true input space,
//! plus everything needed to measure how well that holds up: a small
//! deterministic tensor/network engine, per-image implicit-network fitting,
//! classifier training, white- and black-box attacks (including trained
//! bypass approximations and key search), and robust-accuracy reporting.
//!
//! All computation is bitwise reproducible: every random draw comes from a
//! labelled stream derived from a 64-bit private key, and every floating
//! point reduction runs in a fixed order regardless of thread count.

pub mod attacks;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inr;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use rng::PrivateKey;
pub use scalar::Scalar;

/// Default compute-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor, used by gradient oracles and high-accuracy checks.
pub type Tensor64 = tensor::Tensor<f64>;
