//! Minimal reverse-mode layer engine.
//!
//! Layers cache what they need during a training-mode forward pass and turn an
//! output gradient into an input gradient on `backward`, accumulating
//! parameter gradients as they go. Evaluation-mode inference goes through
//! `&self` and caches nothing, so a trained model can be shared across threads.
//!
//! Everything is generic over [`Scalar`]: training runs in `f32`, gradient
//! checks in `f64`.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dropout;
mod loss;
mod pool;
mod scalar;
mod sequential;
mod tensor;

pub use activation::{relu, sigmoid, Relu, Sigmoid};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::BatchNorm2d;
pub use conv::{conv_output_size, Conv2d, Init};
pub use dropout::{dropout_mask, Dropout};
pub use loss::{bce_loss, BCE_CLAMP};
pub use pool::{MaxPool2, Upsample2};
pub use scalar::Scalar;
pub use sequential::{Layer, LayerKind, LayerSpec, Sequential};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("batch norm needs more than one value per channel in training mode")]
    SingletonBatch,
    #[error("dropout rate must be in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("backward called on {0} without a cached training forward pass")]
    NoCache(&'static str),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Training or evaluation behaviour for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
