//! Audio-domain building blocks: WAV I/O, μ-law companding, noise injection,
//! energy-based denoising and autocorrelation pitch tracking.

mod mulaw;
mod noise;
mod pitch;
mod vad;
mod wav;

pub use mulaw::{mulaw_decode, mulaw_encode, MuLawCodec, MULAW_LEVELS, MULAW_MID_LEVEL};
pub use noise::{inject_noise, NoiseConfig};
pub use pitch::{
    estimate_pitch, PitchFrame, PITCH_COMPARE_LEN, PITCH_MAX_LAG, PITCH_MIN_LAG, VOICING_THRESHOLD,
};
pub use vad::{frame_energy, vad_denoise, vad_keep_mask, VadConfig};
pub use wav::{wav_decode, wav_encode, wav_read, wav_write};

use std::path::PathBuf;

use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding (format tag {0}); only 16-bit PCM is supported")]
    UnsupportedEncoding(u16),
    #[error("unsupported channel count {0}; only mono is supported")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0}; only 16-bit samples are supported")]
    UnsupportedBitDepth(u16),
    #[error("non-finite sample value")]
    NonFinite,
    #[error("mu-law level {0} out of range 0..=255")]
    LevelOutOfRange(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_normalized(&self) -> bool {
        self.samples.iter().all(|s| (-1.0..=1.0).contains(s))
    }

    /// Copy with every sample clamped into `[-1, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Signal-to-noise ratio of `estimate` against `reference`, in dB.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (signal / noise).log10()
}
