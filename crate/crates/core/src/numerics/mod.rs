//! Dense `f64` kernels for the forecaster: tensors, parameter sets, the fixed
//! layer set with hand-written backward passes, finite-difference gradient
//! checking and an Adam optimizer.

mod attention;
mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod tensor;

pub use attention::{attention, attention_backward, attention_forward, softmax_rows};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT_VERSION};
pub(crate) use attention::{sdpa_backward, sdpa_forward};
pub use gradcheck::{grad_check, grad_check_against, GradCheckOptions, GradCheckReport};
pub use layers::{
    dropout_mask, gelu, gelu_grad, BatchNorm, BatchNormCache, BnStats, FlattenHead, GeluFfn, GeluFfnCache, InstanceNorm,
    InstanceNormCache, Layer, Linear, Mode,
};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use tensor::{matmul, matmul_at, matmul_bt, Gradients, Param, ParamSet, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm `{0}` evaluated before any running statistics were accumulated")]
    EvalBeforeAnyTraining(String),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NumericsError::ShapeMismatch(msg.into()))
}
