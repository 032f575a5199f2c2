//! Energy-threshold voice activity detection used as a post-synthesis gate.

use super::{AudioClip, Result, SignalError};

#[derive(Clone, Debug, PartialEq)]
pub struct VadConfig {
    pub frame_size: usize,
    /// Frames quieter than this, relative to the loudest frame, are silent.
    pub threshold_db: f64,
    /// Silent frames kept after each active frame.
    pub hangover_frames: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_size: 160,
            threshold_db: -40.0,
            hangover_frames: 2,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 {
            return Err(SignalError::InvalidConfig("vad frame_size must be > 0".into()));
        }
        if !self.threshold_db.is_finite() {
            return Err(SignalError::InvalidConfig("vad threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Mean squared sample per frame; the trailing partial frame is averaged
/// over its own length.
pub fn frame_energy(samples: &[f64], frame_size: usize) -> Vec<f64> {
    assert!(frame_size > 0, "frame_size must be > 0");
    samples
        .chunks(frame_size)
        .map(|f| f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64)
        .collect()
}

/// Per-frame keep decision: active frames plus the hangover after each.
pub fn vad_keep_mask(samples: &[f64], cfg: &VadConfig) -> Vec<bool> {
    let energy = frame_energy(samples, cfg.frame_size);
    let peak = energy.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return vec![false; energy.len()];
    }
    let active: Vec<bool> = energy
        .iter()
        .map(|&e| 10.0 * (e / peak + 1e-12).log10() >= cfg.threshold_db)
        .collect();
    let mut keep = vec![false; active.len()];
    let mut since_active = None;
    for (f, &a) in active.iter().enumerate() {
        if a {
            since_active = Some(0);
        } else if let Some(n) = since_active.as_mut() {
            *n += 1;
        }
        keep[f] = matches!(since_active, Some(n) if n <= cfg.hangover_frames);
    }
    keep
}

/// Zeroes frames that are silent and outside every hangover window; kept
/// frames are copied bit-for-bit.
pub fn vad_denoise(clip: &AudioClip, cfg: &VadConfig) -> Result<AudioClip> {
    cfg.validate()?;
    let keep = vad_keep_mask(&clip.samples, cfg);
    let mut out = clip.samples.clone();
    for (frame, k) in out.chunks_mut(cfg.frame_size).zip(keep) {
        if !k {
            frame.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(AudioClip::new(out, clip.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_of_simple_frames() {
        let mut x = vec![0.0; 4];
        x.extend([0.5; 4]);
        x.extend([1.0, 0.0]);
        assert_eq!(frame_energy(&x, 4), vec![0.0, 0.25, 0.5]);
        assert!(frame_energy(&[], 4).is_empty());
    }

    #[test]
    fn hangover_keeps_trailing_frames() {
        let mut x = vec![0.5; 10];
        x.extend(vec![1e-4; 50]);
        let cfg = VadConfig {
            frame_size: 10,
            threshold_db: -40.0,
            hangover_frames: 2,
        };
        assert_eq!(
            vad_keep_mask(&x, &cfg),
            vec![true, true, true, false, false, false]
        );
    }

    #[test]
    fn silence_stays_silent() {
        let clip = AudioClip::new(vec![0.0; 500], 16_000);
        assert_eq!(vad_denoise(&clip, &VadConfig::default()).unwrap(), clip);
    }
}
