//! End-to-end neural vocoder: a convolutional/recurrent coder that learns
//! frame-rate features from raw audio and an autoregressive voder that
//! regenerates the waveform one μ-law sample at a time.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coder;
pub mod config;
mod error;
pub mod fixtures;
pub mod gradsuite;
pub mod model;
pub mod numerics;
pub mod signal;
pub mod trainer;
pub mod voder;

pub use error::{Error, Result};
