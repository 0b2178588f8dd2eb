//! Convolutional water-contamination classifier.
//!
//! The engine is generic over the element type ([`Scalar`], implemented for
//! `f32` and `f64`). Training and evaluation run in double precision; the
//! aliases below name the concrete types most callers want.

pub mod data;
pub mod eval;
pub mod graph;
pub mod label;
pub mod model;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use label::Label;
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::TensorError;

/// Double-precision tensor used throughout training.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor for the optional inference path.
pub type TensorF32 = tensor::Tensor<f32>;
/// Double-precision network.
pub type Network = model::Network<f64>;
/// Single-precision network, obtained with [`model::Network::cast`].
pub type NetworkF32 = model::Network<f32>;
