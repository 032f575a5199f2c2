//! Central finite-difference gradient checker.
//!
//! The scalar objective is `Σ wᵢ · outᵢ` with fixed pseudo-random weights, so
//! every output element contributes to the check.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

/// Gradients smaller than this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-3;
/// One-sided slopes differing by more than this (relative) mark a kink.
const KINK_SPREAD: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement). `None` checks every scalar.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
    /// Test fixture: corrupt the dense kernel's backward with a sign flip.
    pub plant_sign_flip: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_coords_per_input: None,
            seed: 0,
            plant_sign_flip: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// `(input index, coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
    /// Coordinates excluded because the perturbation crossed a
    /// non-differentiable point (e.g. a ReLU or max-pool switch).
    pub kinks: usize,
}

impl GradReport {
    /// Folds several reports for the same op kind into one row.
    pub fn merge(name: &str, reports: &[GradReport]) -> GradReport {
        let mut out = GradReport {
            name: name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            tol: reports.first().map_or(0.0, |r| r.tol),
            passed: true,
            worst: None,
            kinks: 0,
        };
        for r in reports {
            out.checked += r.checked;
            out.kinks += r.kinks;
            out.passed &= r.passed;
            if r.max_rel_error > out.max_rel_error || r.max_rel_error.is_nan() {
                out.max_rel_error = r.max_rel_error;
                out.worst = r.worst;
            }
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape's analytic gradient of `f` with respect to every input
/// against central differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn grad_check<F>(name: &str, inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut tape = Tape::new();
    if cfg.plant_sign_flip {
        tape.plant_dense_sign_flip();
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out_len = tape.value(out).len();
    let weights: Vec<f64> = if out_len == 1 {
        vec![1.0]
    } else {
        (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    tape.backward_with(out, &weights)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let objective = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        tol: cfg.tol,
        passed: true,
        worst: None,
        kinks: 0,
    };
    let base = objective(&work)?;
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(limit) if limit < input.len() => index::sample(&mut rng, input.len(), limit).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + cfg.eps;
            let plus = objective(&work)?;
            work[i].data_mut()[c] = orig - cfg.eps;
            let minus = objective(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[i][c];
            let err = relative_error(a, numeric);
            if err > cfg.tol {
                let right = (plus - base) / cfg.eps;
                let left = (base - minus) / cfg.eps;
                let spread = relative_error(right, left);
                let one_sided = relative_error(a, right).min(relative_error(a, left));
                if spread > KINK_SPREAD && one_sided <= KINK_SPREAD {
                    report.kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((i, c));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}
