//! Network definition, construction, inference and the weights file.

mod network;
mod spec;
pub mod weights;

use thiserror::Error;

pub use network::Network;
pub use spec::{LayerSpec, NetworkSpec};
pub use weights::{load, save, WeightsError, WeightsFile};

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("layer {index} ({layer}): {reason}")]
    IncompatibleLayer {
        index: usize,
        layer: String,
        reason: String,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input shape {actual:?} does not match network input {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
