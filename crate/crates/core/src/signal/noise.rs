use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian noise levels injected into the network inputs during training,
/// in normalized amplitude units.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub voder_sigma: f64,
    pub coder_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            voder_sigma: 0.2,
            coder_sigma: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            voder_sigma: 0.0,
            coder_sigma: 0.0,
        }
    }
}

/// `clamp(x + N(0, sigma²), -1, 1)` element-wise. `sigma == 0` returns the
/// input unchanged and draws nothing from `rng`.
pub fn inject_noise<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| {
            let g: f64 = rng.sample(StandardNormal);
            (v + sigma * g).clamp(-1.0, 1.0)
        })
        .collect()
}
