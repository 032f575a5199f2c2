use super::{Result, SignalError};

pub const MULAW_LEVELS: usize = 256;
/// Level of an exactly-zero input.
pub const MULAW_MID_LEVEL: usize = 128;

/// μ-law companding onto `levels` uniform bins of the companded axis.
///
/// Encoding floors the companded value into its bin; decoding returns the
/// inverse transform of the bin center, so `encode(decode(l)) == l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuLawCodec {
    pub mu: f64,
    pub levels: usize,
}

impl Default for MuLawCodec {
    fn default() -> Self {
        Self {
            mu: 255.0,
            levels: MULAW_LEVELS,
        }
    }
}

impl MuLawCodec {
    pub fn compress(&self, x: f64) -> f64 {
        x.signum() * (self.mu * x.abs()).ln_1p() / self.mu.ln_1p()
    }

    pub fn expand(&self, y: f64) -> f64 {
        y.signum() * ((1.0 + self.mu).powf(y.abs()) - 1.0) / self.mu
    }

    /// Inputs outside `[-1, 1]` are clamped; NaN is an error.
    pub fn encode(&self, x: f64) -> Result<usize> {
        if x.is_nan() {
            return Err(SignalError::NonFinite);
        }
        let f = self.compress(x.clamp(-1.0, 1.0));
        let bin = ((f + 1.0) / 2.0 * self.levels as f64).floor();
        Ok((bin.max(0.0) as usize).min(self.levels - 1))
    }

    pub fn decode(&self, level: usize) -> Result<f64> {
        if level >= self.levels {
            return Err(SignalError::LevelOutOfRange(level));
        }
        Ok(self.expand(self.bin_edge(level as f64 + 0.5)))
    }

    /// Companded-axis coordinate of fractional bin position `pos`.
    fn bin_edge(&self, pos: f64) -> f64 {
        2.0 * pos / self.levels as f64 - 1.0
    }

    /// Amplitude-domain interval `[lo, hi]` covered by `level`.
    pub fn bin_bounds(&self, level: usize) -> (f64, f64) {
        (
            self.expand(self.bin_edge(level as f64)),
            self.expand(self.bin_edge(level as f64 + 1.0)),
        )
    }

    pub fn encode_all(&self, xs: &[f64]) -> Result<Vec<usize>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    /// Decoded amplitude for every level, indexed by level.
    pub fn decode_table(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|l| self.decode(l).expect("level in range"))
            .collect()
    }
}

pub fn mulaw_encode(x: f64) -> Result<usize> {
    MuLawCodec::default().encode(x)
}

pub fn mulaw_decode(level: usize) -> Result<f64> {
    MuLawCodec::default().decode(level)
}
