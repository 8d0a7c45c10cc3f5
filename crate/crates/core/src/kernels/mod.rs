//! Forward and backward compute primitives.
//!
//! Kernels never quantize their operands: callers pass tensors already
//! projected per the active policy, and every kernel accumulates and returns
//! FP32. Each output element is reduced in a fixed order, so results are
//! bit-reproducible.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod gemm;
mod loss;
mod lstm;
mod pool;

use thiserror::Error;

use crate::tensor::TensorError;

pub use activation::{activation_backward, activation_forward, ActivationKind};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_inference, BatchNormState};
pub use conv::{col2im, conv2d_backward, conv2d_forward, im2col, ConvSpec};
pub use dropout::{dropout, dropout_backward};
pub use gemm::{bias_add, bias_add_channels, bias_grad, bias_grad_channels, gemm, gemm_nt, gemm_tn, transpose, GemmAccumOrder};
pub use loss::{binary_log_loss, mse_loss, sigmoid_log_loss, softmax_cross_entropy, LOG_LOSS_CLAMP};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmCache, LstmGrads, LstmWeights};
pub use pool::{pool_backward, pool_forward, PoolCache, PoolKind, PoolSpec};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid {op} configuration: {detail}")]
    InvalidSpec { op: &'static str, detail: String },
    #[error("batch norm needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f32),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> KernelError {
    KernelError::Shape { op, detail: detail.into() }
}
