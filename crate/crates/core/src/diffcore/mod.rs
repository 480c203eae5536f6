//! Minimal reverse-mode differentiation over a fixed operator catalogue:
//! 2-D convolution, ReLU, 2x2 max-pool, global average pool, dense, channel
//! concat, nearest 2x upsample, sigmoid, element-wise add/scale and binary
//! cross-entropy with logits.
//!
//! A [`Tape`] records operations in execution order (which is a topological
//! order), and [`Tape::backward`] walks it once in reverse. Trainability is not
//! a concern of the tape: gradients are produced for every parameter that was
//! read, and [`Optimizer`] is what leaves frozen parameters untouched.

mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Objective, ParamCheck};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{Param, ParamSet};
pub use tape::{Gradients, Padding, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(DiffError::ShapeMismatch { op, detail: detail.into() })
}
