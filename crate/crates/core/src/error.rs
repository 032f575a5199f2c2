use thiserror::Error;

use crate::numerics::NumericsError;
use crate::signal::SignalError;
use crate::trainer::CheckpointError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("feature dimension {got} does not match the model ({expected})")]
    FeatureDim { expected: usize, got: usize },
    #[error("non-finite value at step {step} in `{tensor}`")]
    NonFinite { step: u64, tensor: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
