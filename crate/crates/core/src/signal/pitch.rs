//! Normalized-autocorrelation pitch tracker on a fixed frame grid.

use super::AudioClip;

pub const PITCH_MIN_LAG: usize = 32;
pub const PITCH_MAX_LAG: usize = 400;
/// Samples compared at every lag.
pub const PITCH_COMPARE_LEN: usize = 400;
pub const VOICING_THRESHOLD: f64 = 0.3;
/// A shorter-lag peak wins if it reaches this fraction of the best peak,
/// which keeps period multiples from being reported.
const SUBHARMONIC_RATIO: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchFrame {
    /// Period in samples; 0 when unvoiced.
    pub period: usize,
    /// Peak normalized autocorrelation in `[0, 1]`.
    pub correlation: f64,
    pub voiced: bool,
}

impl PitchFrame {
    pub const UNVOICED: PitchFrame = PitchFrame {
        period: 0,
        correlation: 0.0,
        voiced: false,
    };

    pub fn from_measurement(period: usize, correlation: f64) -> Self {
        let correlation = correlation.clamp(0.0, 1.0);
        let voiced = correlation >= VOICING_THRESHOLD && period > 0;
        Self {
            period: if voiced { period } else { 0 },
            correlation,
            voiced,
        }
    }
}

/// One entry per `frame_size` block of the clip (trailing partial block
/// included). Clips shorter than the analysis window are all unvoiced.
pub fn estimate_pitch(clip: &AudioClip, frame_size: usize) -> Vec<PitchFrame> {
    assert!(frame_size > 0, "frame_size must be > 0");
    let x = &clip.samples;
    let n_frames = x.len().div_ceil(frame_size);
    let window = PITCH_COMPARE_LEN + PITCH_MAX_LAG;
    if x.len() < window {
        return vec![PitchFrame::UNVOICED; n_frames];
    }
    (0..n_frames)
        .map(|f| {
            let center = f * frame_size + frame_size / 2;
            let start = center.saturating_sub(window / 2).min(x.len() - window);
            analyze_window(&x[start..start + window])
        })
        .collect()
}

fn analyze_window(w: &[f64]) -> PitchFrame {
    let a = &w[..PITCH_COMPARE_LEN];
    let energy_a: f64 = a.iter().map(|v| v * v).sum();
    if energy_a == 0.0 {
        return PitchFrame::UNVOICED;
    }
    // Running energy of the lagged segment.
    let mut energy_b: f64 = w[PITCH_MIN_LAG..PITCH_MIN_LAG + PITCH_COMPARE_LEN]
        .iter()
        .map(|v| v * v)
        .sum();
    let mut r = Vec::with_capacity(PITCH_MAX_LAG - PITCH_MIN_LAG + 1);
    for lag in PITCH_MIN_LAG..=PITCH_MAX_LAG {
        if lag > PITCH_MIN_LAG {
            let out = w[lag - 1];
            let inn = w[lag + PITCH_COMPARE_LEN - 1];
            energy_b += inn * inn - out * out;
        }
        let b = &w[lag..lag + PITCH_COMPARE_LEN];
        let cross: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let denom = (energy_a * energy_b.max(0.0)).sqrt();
        r.push(if denom > 0.0 { cross / denom } else { 0.0 });
    }

    let peaks: Vec<usize> = (1..r.len() - 1)
        .filter(|&i| r[i] > r[i - 1] && r[i] >= r[i + 1])
        .collect();
    let Some(best) = peaks.iter().map(|&i| r[i]).reduce(f64::max) else {
        return PitchFrame::UNVOICED;
    };
    let chosen = peaks
        .iter()
        .copied()
        .find(|&i| r[i] >= SUBHARMONIC_RATIO * best)
        .expect("best peak qualifies");
    PitchFrame::from_measurement(PITCH_MIN_LAG + chosen, best)
}
