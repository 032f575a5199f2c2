//! Output-distribution sampling strategies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::softmax;
use crate::signal::PitchFrame;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplingStrategy {
    #[default]
    Argmax,
    Multinomial,
    /// Sharpened draws (`softmax(c · logits)`) on voiced frames.
    Conditional,
    /// Draws from `softmax((1 + pc_gain · correlation) · logits)`.
    PitchCorrelation,
}

impl SamplingStrategy {
    pub fn needs_pitch(self) -> bool {
        matches!(self, Self::Conditional | Self::PitchCorrelation)
    }

    pub fn is_random(self) -> bool {
        self != Self::Argmax
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Argmax => "argmax",
            Self::Multinomial => "multinomial",
            Self::Conditional => "conditional",
            Self::PitchCorrelation => "pitch_correlation",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "argmax" => Ok(Self::Argmax),
            "multinomial" => Ok(Self::Multinomial),
            "conditional" => Ok(Self::Conditional),
            "pitch_correlation" | "pitch-correlation" => Ok(Self::PitchCorrelation),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    /// Logit multiplier on voiced frames for [`SamplingStrategy::Conditional`].
    pub c: f64,
    pub pc_gain: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Argmax,
            c: 2.0,
            pc_gain: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_strategy(strategy: SamplingStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("sampler c must be > 0, got {}", self.c)));
        }
        if !(self.pc_gain >= 0.0) || !self.pc_gain.is_finite() {
            return Err(Error::Config(format!(
                "pitch-correlation gain must be >= 0, got {}",
                self.pc_gain
            )));
        }
        Ok(())
    }
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng + ?Sized>(logits: &[f64], scale: f64, rng: &mut R) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&l| l * scale).collect();
    let probs = softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding left the cumulative sum just below u.
    last
}

/// Picks the next μ-law level from `logits`.
///
/// Argmax returns the lowest index attaining the maximum and consumes no
/// randomness; every other strategy consumes one uniform draw.
pub fn sample_level<R: Rng + ?Sized>(
    logits: &[f64],
    sampler: &SamplerConfig,
    pitch: Option<&PitchFrame>,
    rng: &mut R,
) -> Result<usize> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite logits".into()));
    }
    let need_pitch = || {
        pitch.ok_or_else(|| {
            Error::Config(format!("sampler `{}` needs pitch information", sampler.strategy))
        })
    };
    Ok(match sampler.strategy {
        SamplingStrategy::Argmax => argmax(logits),
        SamplingStrategy::Multinomial => draw(logits, 1.0, rng),
        SamplingStrategy::Conditional => {
            let scale = if need_pitch()?.voiced { sampler.c } else { 1.0 };
            draw(logits, scale, rng)
        }
        SamplingStrategy::PitchCorrelation => {
            let corr = need_pitch()?.correlation;
            draw(logits, 1.0 + sampler.pc_gain * corr, rng)
        }
    })
}
