//! Analysis network: strided conv stack, per-frame dense, frame-rate GRU and a
//! linear feature head.
//!
//! The input is reflect-padded on the left by the stack's receptive-field
//! slack and on the right up to a whole number of frames, so `n` samples
//! always yield `ceil(n / K)` frames and frame `t` only sees samples up to the
//! end of frame `t`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelParams};
use crate::numerics::{Activation, LayerSpec, Tape, Tensor, Var};
use crate::signal::AudioClip;

/// One strided convolution of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }
}

impl fmt::Display for ConvLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.channels, self.kernel, self.stride)
    }
}

impl FromStr for ConvLayer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected channels:kernel:stride, got `{s}`"));
        }
        let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
        Ok(Self::new(num(parts[0])?, num(parts[1])?, num(parts[2])?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoderConfig {
    pub conv: Vec<ConvLayer>,
    /// Width of the tanh dense layer between the conv stack and the GRU.
    pub dense_dim: usize,
    pub gru_hidden: usize,
    pub feat_dim: usize,
}

impl Default for CoderConfig {
    fn default() -> Self {
        Self {
            conv: vec![
                ConvLayer::new(16, 9, 2),
                ConvLayer::new(32, 9, 2),
                ConvLayer::new(64, 9, 2),
                ConvLayer::new(128, 9, 4),
                ConvLayer::new(128, 9, 5),
            ],
            dense_dim: 128,
            gru_hidden: 128,
            feat_dim: 64,
        }
    }
}

impl CoderConfig {
    /// Samples per feature frame: the product of the strides.
    pub fn frame_size(&self) -> usize {
        self.conv.iter().map(|c| c.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("coder needs at least one conv layer".into()));
        }
        for (_, spec) in self.layers() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Layers in evaluation order with their parameter-name stems.
    pub fn layers(&self) -> Vec<(String, LayerSpec)> {
        let mut out = Vec::new();
        let mut in_channels = 1;
        for (i, c) in self.conv.iter().enumerate() {
            out.push((
                format!("conv{i}"),
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels: c.channels,
                    kernel: c.kernel,
                    stride: c.stride,
                },
            ));
            in_channels = c.channels;
        }
        out.push((
            "dense_in".into(),
            LayerSpec::Dense {
                inputs: in_channels,
                outputs: self.dense_dim,
                activation: Activation::Tanh,
            },
        ));
        out.push((
            "gru".into(),
            LayerSpec::Gru {
                inputs: self.dense_dim,
                hidden: self.gru_hidden,
            },
        ));
        out.push((
            "dense_out".into(),
            LayerSpec::Dense {
                inputs: self.gru_hidden,
                outputs: self.feat_dim,
                activation: Activation::None,
            },
        ));
        out
    }

    /// Exact input length for which the conv stack emits `n_frames` steps.
    pub fn required_input_len(&self, n_frames: usize) -> usize {
        self.conv
            .iter()
            .rev()
            .fold(n_frames, |len, c| (len - 1) * c.stride + c.kernel)
    }

    /// Reflect padding `(left, right)` applied to an `n_samples` input.
    pub fn padding(&self, n_samples: usize) -> Result<(usize, usize)> {
        let n = coder_num_frames(n_samples, self)?;
        let k = self.frame_size();
        let left = self.required_input_len(1).saturating_sub(k);
        let right = n * k - n_samples;
        debug_assert_eq!(n_samples + left + right, self.required_input_len(n));
        Ok((left, right))
    }
}

/// `ceil(n_samples / K)`; errors below one frame.
pub fn coder_num_frames(n_samples: usize, cfg: &CoderConfig) -> Result<usize> {
    let k = cfg.frame_size();
    if n_samples < k {
        return Err(Error::InputTooShort {
            len: n_samples,
            need: k,
        });
    }
    Ok(n_samples.div_ceil(k))
}

/// Coder output: one row of `feat_dim` values per frame.
///
/// Values are stored at 32-bit precision, the precision of feature files, so
/// in-process and file-based pipelines see identical features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub feat_dim: usize,
    pub frame_size: usize,
    pub sample_rate: u32,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f32>,
        n_frames: usize,
        feat_dim: usize,
        frame_size: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if n_frames == 0 || feat_dim == 0 || frame_size == 0 {
            return Err(Error::Config(format!(
                "feature matrix needs positive sizes, got {n_frames}x{feat_dim} (frame size {frame_size})"
            )));
        }
        if values.len() != n_frames * feat_dim {
            return Err(Error::Config(format!(
                "feature matrix has {} values, expected {n_frames}x{feat_dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            n_frames,
            feat_dim,
            frame_size,
            sample_rate,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.feat_dim..(t + 1) * self.feat_dim]
    }

    /// Number of samples the features describe.
    pub fn n_samples(&self) -> usize {
        self.n_frames * self.frame_size
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.n_frames, self.feat_dim],
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("feature matrix sizes are validated on construction")
    }
}

/// Records the coder on `tape` for raw samples `x [1 × len]`; returns
/// features `[n_frames × feat_dim]`.
pub fn coder_graph(tape: &mut Tape, p: &BoundParams, x: Var, cfg: &CoderConfig) -> Result<Var> {
    let len = tape.try_value(x)?.cols();
    let (left, right) = cfg.padding(len)?;
    let mut h = tape.reflect_pad(x, left, right)?;
    for (i, c) in cfg.conv.iter().enumerate() {
        let w = p.var(&format!("coder.conv{i}.weight"))?;
        let b = p.var(&format!("coder.conv{i}.bias"))?;
        h = tape.conv1d(h, w, b, c.stride)?;
        h = tape.activation(h, Activation::Relu)?;
    }
    let frames = tape.transpose(h)?;
    let d = tape.dense(
        frames,
        p.var("coder.dense_in.weight")?,
        p.var("coder.dense_in.bias")?,
        Activation::Tanh,
    )?;
    let h0 = tape.constant(Tensor::zeros(&[cfg.gru_hidden]));
    let g = tape.gru_sequence(d, h0, p.gru("coder.gru")?)?;
    Ok(tape.dense(
        g,
        p.var("coder.dense_out.weight")?,
        p.var("coder.dense_out.bias")?,
        Activation::None,
    )?)
}

/// Extracts features from a clip of at least one frame.
pub fn coder_forward(clip: &AudioClip, params: &ModelParams) -> Result<FeatureMatrix> {
    let cfg = &params.arch().coder;
    let n_frames = coder_num_frames(clip.len(), cfg)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(Tensor::new(vec![1, clip.len()], clip.samples.clone())?);
    let out = coder_graph(&mut tape, &p, x, cfg)?;
    let values = tape.value(out).data().iter().map(|&v| v as f32).collect();
    FeatureMatrix::new(values, n_frames, cfg.feat_dim, cfg.frame_size(), clip.sample_rate)
}
