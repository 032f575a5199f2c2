//! Synthesis network: conditioning stack over coder features, then a
//! sample-rate loop of embedding → GRU → GRU → DualFC → 256-way softmax.

mod engine;
mod sampler;

pub use engine::{VoderEngine, VoderState};
pub use sampler::{sample_level, SamplerConfig, SamplingStrategy};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coder::{coder_forward, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelParams};
use crate::numerics::{Activation, LayerSpec, Tape, Tensor, Var};
use crate::signal::{
    estimate_pitch, vad_denoise, AudioClip, MuLawCodec, PitchFrame, VadConfig, MULAW_LEVELS,
    MULAW_MID_LEVEL,
};

#[derive(Clone, Debug, PartialEq)]
pub struct VoderConfig {
    pub feat_dim: usize,
    /// Kernel of both conditioning convolutions (odd, same-length via reflect pad).
    pub cond_kernel: usize,
    pub cond_channels: usize,
    /// Width of both conditioning dense layers, i.e. of the per-frame
    /// conditioning vector.
    pub cond_dim: usize,
    pub embed_dim: usize,
    pub gru1_hidden: usize,
    pub gru2_hidden: usize,
    pub frame_size: usize,
}

impl Default for VoderConfig {
    fn default() -> Self {
        Self {
            feat_dim: 64,
            cond_kernel: 3,
            cond_channels: 128,
            cond_dim: 128,
            embed_dim: 128,
            gru1_hidden: 256,
            gru2_hidden: 64,
            frame_size: 160,
        }
    }
}

impl VoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cond_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conditioning kernel must be odd for same-length output, got {}",
                self.cond_kernel
            )));
        }
        if self.frame_size == 0 {
            return Err(Error::Config("frame size must be >= 1".into()));
        }
        for (_, spec) in self.layers() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<(String, LayerSpec)> {
        let conv = |name: &str, inputs| {
            (
                name.to_string(),
                LayerSpec::Conv1d {
                    in_channels: inputs,
                    out_channels: self.cond_channels,
                    kernel: self.cond_kernel,
                    stride: 1,
                },
            )
        };
        let dense = |name: &str, inputs| {
            (
                name.to_string(),
                LayerSpec::Dense {
                    inputs,
                    outputs: self.cond_dim,
                    activation: Activation::Tanh,
                },
            )
        };
        vec![
            conv("cond_conv0", self.feat_dim),
            conv("cond_conv1", self.cond_channels),
            dense("cond_dense0", self.cond_channels),
            dense("cond_dense1", self.cond_dim),
            (
                "embed".into(),
                LayerSpec::Embedding {
                    vocab: MULAW_LEVELS,
                    dim: self.embed_dim,
                },
            ),
            (
                "gru1".into(),
                LayerSpec::Gru {
                    inputs: self.embed_dim + self.cond_dim,
                    hidden: self.gru1_hidden,
                },
            ),
            (
                "gru2".into(),
                LayerSpec::Gru {
                    inputs: self.gru1_hidden,
                    hidden: self.gru2_hidden,
                },
            ),
            (
                "dualfc".into(),
                LayerSpec::DualFc {
                    inputs: self.gru2_hidden,
                    outputs: MULAW_LEVELS,
                },
            ),
        ]
    }
}

/// Records the conditioning stack: features `[n × feat_dim]` →
/// `[n × cond_dim]`.
pub fn condition_graph(tape: &mut Tape, p: &BoundParams, feats: Var, cfg: &VoderConfig) -> Result<Var> {
    let left = (cfg.cond_kernel - 1) / 2;
    let right = cfg.cond_kernel - 1 - left;
    let mut h = tape.transpose(feats)?;
    for i in 0..2 {
        h = tape.reflect_pad(h, left, right)?;
        h = tape.conv1d(
            h,
            p.var(&format!("voder.cond_conv{i}.weight"))?,
            p.var(&format!("voder.cond_conv{i}.bias"))?,
            1,
        )?;
        h = tape.activation(h, Activation::Tanh)?;
    }
    let mut h = tape.transpose(h)?;
    for i in 0..2 {
        h = tape.dense(
            h,
            p.var(&format!("voder.cond_dense{i}.weight"))?,
            p.var(&format!("voder.cond_dense{i}.bias"))?,
            Activation::Tanh,
        )?;
    }
    Ok(h)
}

fn check_features(feats: &FeatureMatrix, cfg: &VoderConfig) -> Result<()> {
    if feats.feat_dim != cfg.feat_dim {
        return Err(Error::FeatureDim {
            expected: cfg.feat_dim,
            got: feats.feat_dim,
        });
    }
    if feats.frame_size != cfg.frame_size {
        return Err(Error::Config(format!(
            "features use frame size {}, model expects {}",
            feats.frame_size, cfg.frame_size
        )));
    }
    Ok(())
}

/// One conditioning vector per frame, `[n_frames × cond_dim]`.
pub fn condition_features(feats: &FeatureMatrix, params: &ModelParams) -> Result<Tensor> {
    let cfg = &params.arch().voder;
    if feats.feat_dim != cfg.feat_dim {
        return Err(Error::FeatureDim {
            expected: cfg.feat_dim,
            got: feats.feat_dim,
        });
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(feats.to_tensor());
    let out = condition_graph(&mut tape, &p, x, cfg)?;
    Ok(tape.value(out).clone())
}

/// `out[t] = cond[t / k]`: repeats each row `k` times.
pub fn upsample_repeat(cond: &Tensor, k: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(cond.clone());
    let out = tape.repeat_rows(x, k)?;
    Ok(tape.value(out).clone())
}

/// Teacher-forced voder over `prev_levels.len() == n_frames · K` samples;
/// returns logits `[T × 256]`.
pub fn voder_teacher_graph(
    tape: &mut Tape,
    p: &BoundParams,
    feats: Var,
    prev_levels: &[usize],
    cfg: &VoderConfig,
) -> Result<Var> {
    let n_frames = tape.try_value(feats)?.rows();
    if prev_levels.len() != n_frames * cfg.frame_size {
        return Err(Error::Config(format!(
            "{} teacher levels for {n_frames} frames of {} samples",
            prev_levels.len(),
            cfg.frame_size
        )));
    }
    let cond = condition_graph(tape, p, feats, cfg)?;
    let cond = tape.repeat_rows(cond, cfg.frame_size)?;
    let emb = tape.embedding(p.var("voder.embed.table")?, prev_levels)?;
    let x = tape.concat_cols(&[emb, cond])?;
    let h1_0 = tape.constant(Tensor::zeros(&[cfg.gru1_hidden]));
    let h1 = tape.gru_sequence(x, h1_0, p.gru("voder.gru1")?)?;
    let h2_0 = tape.constant(Tensor::zeros(&[cfg.gru2_hidden]));
    let h2 = tape.gru_sequence(h1, h2_0, p.gru("voder.gru2")?)?;
    Ok(tape.dualfc(h2, p.dualfc("voder.dualfc")?)?)
}

/// One differentiable sample step: `(logits [256], h1', h2')`.
pub fn voder_step_graph(
    tape: &mut Tape,
    p: &BoundParams,
    prev_level: usize,
    cond_t: Var,
    h1: Var,
    h2: Var,
) -> Result<(Var, Var, Var)> {
    let emb = tape.embedding_lookup(p.var("voder.embed.table")?, prev_level)?;
    let x = tape.concat_cols(&[emb, cond_t])?;
    let h1 = tape.gru_step(x, h1, p.gru("voder.gru1")?)?;
    let h2 = tape.gru_step(h1, h2, p.gru("voder.gru2")?)?;
    let logits = tape.dualfc(h2, p.dualfc("voder.dualfc")?)?;
    Ok((logits, h1, h2))
}

/// Free-running synthesis of `n_frames · K` samples.
///
/// `pitch` is indexed on the feature frame grid; frames past its end count as
/// unvoiced. It is required by the pitch-dependent strategies.
pub fn synthesize(
    feats: &FeatureMatrix,
    params: &ModelParams,
    sampler: &SamplerConfig,
    pitch: Option<&[PitchFrame]>,
) -> Result<AudioClip> {
    sampler.validate()?;
    let cfg = &params.arch().voder;
    check_features(feats, cfg)?;
    if sampler.strategy.needs_pitch() && pitch.is_none() {
        return Err(Error::Config(format!(
            "sampler `{}` needs pitch information",
            sampler.strategy
        )));
    }
    let cond = condition_features(feats, params)?;
    let engine = VoderEngine::new(params)?;
    let table = MuLawCodec::default().decode_table();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut state = VoderState::new(cfg);
    let mut logits = vec![0.0; MULAW_LEVELS];
    let mut samples = Vec::with_capacity(feats.n_samples());
    for (t, cond_t) in cond.data().chunks_exact(cfg.cond_dim).enumerate() {
        let proj = engine.project_cond(cond_t);
        let frame_pitch = pitch.map(|p| p.get(t).copied().unwrap_or(PitchFrame::UNVOICED));
        for _ in 0..cfg.frame_size {
            engine.step_projected(&mut state, &proj, &mut logits);
            let level = sample_level(&logits, sampler, frame_pitch.as_ref(), &mut rng)?;
            state.prev_level = level;
            samples.push(table[level]);
        }
    }
    Ok(AudioClip::new(samples, feats.sample_rate))
}

/// Analysis followed by synthesis, with optional energy-based denoising.
/// Pitch for pitch-dependent samplers is estimated from `clip` itself.
pub fn copy_synthesis(
    clip: &AudioClip,
    params: &ModelParams,
    sampler: &SamplerConfig,
    denoise: Option<&VadConfig>,
) -> Result<AudioClip> {
    let feats = coder_forward(clip, params)?;
    let pitch = sampler
        .strategy
        .needs_pitch()
        .then(|| estimate_pitch(clip, feats.frame_size));
    let out = synthesize(&feats, params, sampler, pitch.as_deref())?;
    match denoise {
        Some(vad) => Ok(vad_denoise(&out, vad)?),
        None => Ok(out),
    }
}

/// Level fed to the first sample step.
pub const INITIAL_LEVEL: usize = MULAW_MID_LEVEL;
