//! Dense tensors, a reverse-mode autodiff tape, and the differentiable layer
//! kernels the coder and voder are built from.
//!
//! Every kernel works on row-major `f64` buffers. Sequence-shaped inputs are
//! `[T × n]` matrices (one row per time step); convolutions and pooling take
//! `[C × L]` (channels by time).

mod gradcheck;
mod layer;
pub(crate) mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradReport};
pub use layer::{Activation, LayerSpec, ParamInit};
pub use tape::{reflect_index, softmax, DualFcVars, GruVars, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: invalid shape {shape:?}")]
    InvalidShape { op: &'static str, shape: Vec<usize> },
    #[error("{op}: input too short: length {len}, need at least {need}")]
    InputTooShort {
        op: &'static str,
        len: usize,
        need: usize,
    },
    #[error("{op}: index {index} out of range 0..{bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: invalid hyperparameter: {detail}")]
    InvalidHyperparameter { op: &'static str, detail: String },
    #[error("tape: {0}")]
    Tape(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
