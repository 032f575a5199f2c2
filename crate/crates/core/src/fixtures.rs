//! Deterministic signals and a hand-weighted model used by tests, the
//! acceptance suite and CLI demos.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coder::{ConvLayer, CoderConfig};
use crate::model::{ArchConfig, ModelParams};
use crate::numerics::Tensor;
use crate::signal::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::voder::VoderConfig;

/// Three harmonics of a `period`-sample fundamental, peak below 0.7.
pub fn harmonic_clip(len: usize, period: f64) -> AudioClip {
    let samples = (0..len)
        .map(|t| {
            let ph = 2.0 * PI * t as f64 / period;
            0.4 * ph.sin() + 0.2 * (2.0 * ph + 0.5).sin() + 0.1 * (3.0 * ph + 1.0).sin()
        })
        .collect();
    AudioClip::new(samples, DEFAULT_SAMPLE_RATE)
}

/// Frame-aligned layout: `lead` frames of buzz, `tone` frames of a 200 Hz
/// tone at amplitude 0.5, `tail` frames of buzz. Buzz is Gaussian with
/// standard deviation `buzz` (0 gives digital silence). Also returns the
/// per-frame tone mask.
pub fn tone_with_buzz(lead: usize, tone: usize, tail: usize, buzz: f64, seed: u64) -> (AudioClip, Vec<bool>) {
    const FRAME: usize = 160;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity((lead + tone + tail) * FRAME);
    let mut mask = Vec::with_capacity(lead + tone + tail);
    for (frames, is_tone) in [(lead, false), (tone, true), (tail, false)] {
        for _ in 0..frames {
            for _ in 0..FRAME {
                let t = samples.len() as f64;
                samples.push(if is_tone {
                    0.5 * (2.0 * PI * 200.0 * t / DEFAULT_SAMPLE_RATE as f64).sin()
                } else {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    buzz * g
                });
            }
            mask.push(is_tone);
        }
    }
    (AudioClip::new(samples, DEFAULT_SAMPLE_RATE), mask)
}

/// Architecture of [`buzz_model`].
pub fn buzz_arch() -> ArchConfig {
    ArchConfig {
        coder: CoderConfig {
            conv: vec![ConvLayer::new(2, 1, 1), ConvLayer::new(1, 160, 160)],
            dense_dim: 1,
            gru_hidden: 1,
            feat_dim: 1,
        },
        voder: VoderConfig {
            feat_dim: 1,
            cond_kernel: 3,
            cond_channels: 1,
            cond_dim: 1,
            embed_dim: 1,
            gru1_hidden: 2,
            gru2_hidden: 2,
            frame_size: 160,
        },
    }
}

/// A hand-weighted model that mimics a vocoder leaving buzz in silence.
///
/// The coder's single feature is a squashed mean absolute amplitude per
/// frame. The voder alternates between μ-law levels 0 and 255 (full-scale)
/// in frames whose feature is high and between 126 and 130 (amplitude
/// ~5e-4) in frames whose feature is zero.
pub fn buzz_model() -> ModelParams {
    let arch = buzz_arch();
    let mut t: BTreeMap<String, Tensor> = arch
        .param_specs()
        .into_iter()
        .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
        .collect();
    let mut set = |name: &str, values: &[f64]| {
        let tensor = t.get_mut(name).unwrap_or_else(|| panic!("no tensor {name}"));
        tensor.data_mut().copy_from_slice(values);
    };
    // |x| split over two ReLU channels, then averaged over the frame.
    set("coder.conv0.weight", &[1.0, -1.0]);
    set("coder.conv1.weight", &[1.0 / 160.0; 320]);
    set("coder.dense_in.weight", &[10.0]);
    // Update gate pinned open: h = tanh(2·x).
    set("coder.gru.w", &[0.0, 0.0, 2.0]);
    set("coder.gru.b", &[20.0, 0.0, 0.0]);
    set("coder.dense_out.weight", &[1.0]);

    // Centre-tap convolutions and unit dense layers: a monotone squashing.
    set("voder.cond_conv0.weight", &[0.0, 1.0, 0.0]);
    set("voder.cond_conv1.weight", &[0.0, 1.0, 0.0]);
    set("voder.cond_dense0.weight", &[1.0]);
    set("voder.cond_dense1.weight", &[1.0]);
    // Sign of the previous sample.
    let table: Vec<f64> = (0..256).map(|l| if l >= 128 { 1.0 } else { -1.0 }).collect();
    set("voder.embed.table", &table);
    // gru1 input is [embedding, conditioning]; unit 0 carries the sign,
    // unit 1 the loudness.
    let mut w1 = vec![0.0; 12];
    w1[8] = 3.0;
    w1[11] = 4.0;
    set("voder.gru1.w", &w1);
    set("voder.gru1.b", &[20.0, 20.0, 0.0, 0.0, 0.0, 0.0]);
    let mut w2 = vec![0.0; 12];
    w2[8] = 3.0;
    w2[11] = 3.0;
    set("voder.gru2.w", &w2);
    set("voder.gru2.b", &[20.0, 20.0, 0.0, 0.0, 0.0, 0.0]);

    // With s = sign unit (~±0.995) and q = loudness unit (0 or ~0.994),
    // each candidate scores +2 in its own (sign, loudness) quadrant.
    let (k1, k2) = (1.0 / 0.995, 2.0 / 0.994);
    let mut fc_w = vec![0.0; 512];
    let mut fc_b = vec![0.0; 256];
    let mut fc_a = vec![0.0; 256];
    for (level, ws, wq, b) in [
        (0, k1, k2, -1.0),
        (255, -k1, k2, -1.0),
        (126, k1, -k2, 1.0),
        (130, -k1, -k2, 1.0),
    ] {
        fc_w[2 * level] = ws;
        fc_w[2 * level + 1] = wq;
        fc_b[level] = b;
        fc_a[level] = 1.0;
    }
    set("voder.dualfc.w1", &fc_w);
    set("voder.dualfc.b1", &fc_b);
    set("voder.dualfc.a1", &fc_a);

    for v in t.values_mut() {
        for x in v.data_mut() {
            *x = *x as f32 as f64;
        }
    }
    ModelParams::from_tensors(arch, t).expect("buzz model matches its architecture")
}
