//! A small sequential reverse-mode trainer: dense tensors, hand-written layer
//! gradients, Adam, and the CNN used by the synthetic experiments.

mod layers;
mod model;
mod optim;
mod tensor;

use thiserror::Error;

use crate::matrix::MatrixError;
use crate::rls::RlsError;

pub use layers::{Conv2d, Linear, MaxPool, Relu, RmdnLayer, SoftmaxXent};
pub use model::{build_synth_cnn, labels_from_design, Layer, LayerSpec, Model, ModelSpec, Placement};
pub use optim::{adam_step, Adam, AdamConfig, StepDecay};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutonetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Rls(#[from] RlsError),
}

impl From<MatrixError> for AutonetError {
    fn from(e: MatrixError) -> Self {
        AutonetError::Rls(RlsError::Matrix(e))
    }
}
