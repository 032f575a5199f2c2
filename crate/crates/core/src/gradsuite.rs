//! Finite-difference gradient suite: every layer kind on random small
//! instances, the coder stack, and a tiny end-to-end coder + voder loss.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coder::{coder_graph, ConvLayer, CoderConfig};
use crate::error::Result;
use crate::model::{ArchConfig, BoundParams, ModelParams};
use crate::numerics::{
    grad_check, Activation, DualFcVars, GradCheckConfig, GradReport, GruVars, Tape, Tensor, Var,
};
use crate::trainer::{item_loss_graph, BatchItem};
use crate::voder::VoderConfig;

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    /// Random instances per single-layer kind.
    pub instances: usize,
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    /// Test fixture: corrupt the dense backward pass.
    pub plant_fault: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            eps: 1e-5,
            tol: 1e-4,
            plant_fault: false,
        }
    }
}

impl SuiteConfig {
    fn check_cfg(&self, seed: u64, max_coords: Option<usize>) -> GradCheckConfig {
        GradCheckConfig {
            eps: self.eps,
            tol: self.tol,
            max_coords_per_input: max_coords,
            seed,
            plant_sign_flip: self.plant_fault,
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("positive shape")
}

fn rows<F>(name: &str, cfg: &SuiteConfig, salt: u64, mut instance: F) -> Result<GradReport>
where
    F: FnMut(&mut ChaCha8Rng, GradCheckConfig) -> Result<GradReport>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let reports = (0..cfg.instances)
        .map(|i| instance(&mut rng, cfg.check_cfg(cfg.seed.wrapping_add(i as u64), None)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport::merge(name, &reports))
}

fn conv1d(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("conv1d", cfg, 1, |rng, gc| {
        let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let len = rng.random_range(k..=16);
        let inputs = [
            rand_tensor(rng, &[ci, len], 1.0),
            rand_tensor(rng, &[co, ci, k], 1.0),
            rand_tensor(rng, &[co], 1.0),
        ];
        Ok(grad_check("conv1d", &inputs, |t, v| t.conv1d(v[0], v[1], v[2], stride), &gc)?)
    })
}

fn maxpool(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("maxpool1d", cfg, 2, |rng, gc| {
        let c = rng.random_range(1..=3);
        let width = rng.random_range(1..=4);
        let len = rng.random_range(width..=16);
        let inputs = [rand_tensor(rng, &[c, len], 1.0)];
        Ok(grad_check("maxpool1d", &inputs, |t, v| t.maxpool1d(v[0], width), &gc)?)
    })
}

fn dense(cfg: &SuiteConfig) -> Result<GradReport> {
    let acts = [Activation::None, Activation::Tanh, Activation::Relu, Activation::Sigmoid];
    let mut i = 0;
    rows("dense", cfg, 3, |rng, gc| {
        let act = acts[i % acts.len()];
        i += 1;
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let inputs = [
            rand_tensor(rng, &[n], 1.0),
            rand_tensor(rng, &[m, n], 1.0),
            rand_tensor(rng, &[m], 1.0),
        ];
        Ok(grad_check("dense", &inputs, |t, v| t.dense(v[0], v[1], v[2], act), &gc)?)
    })
}

fn gru(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("gru", cfg, 4, |rng, gc| {
        let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let inputs = [
            rand_tensor(rng, &[n], 1.0),
            rand_tensor(rng, &[n], 1.0),
            rand_tensor(rng, &[n], 1.0),
            rand_tensor(rng, &[m], 1.0),
            rand_tensor(rng, &[3 * m, n], 1.0),
            rand_tensor(rng, &[3 * m, m], 1.0),
            rand_tensor(rng, &[3 * m], 1.0),
        ];
        // Three chained steps.
        Ok(grad_check(
            "gru",
            &inputs,
            |t, v| {
                let p = GruVars {
                    w: v[4],
                    u: v[5],
                    b: v[6],
                };
                let mut h = v[3];
                for &x in &v[..3] {
                    h = t.gru_step(x, h, p)?;
                }
                Ok(h)
            },
            &gc,
        )?)
    })
}

fn embedding(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("embedding", cfg, 5, |rng, gc| {
        let vocab = rng.random_range(1..=8);
        let d = rng.random_range(1..=4);
        let count = rng.random_range(1..=6);
        let levels: Vec<usize> = (0..count).map(|_| rng.random_range(0..vocab)).collect();
        let inputs = [rand_tensor(rng, &[vocab, d], 1.0)];
        Ok(grad_check("embedding", &inputs, |t, v| t.embedding(v[0], &levels), &gc)?)
    })
}

fn dualfc(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("dualfc", cfg, 6, |rng, gc| {
        let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=5));
        let inputs = [
            rand_tensor(rng, &[n], 1.0),
            rand_tensor(rng, &[m, n], 1.0),
            rand_tensor(rng, &[m, n], 1.0),
            rand_tensor(rng, &[m], 1.0),
            rand_tensor(rng, &[m], 1.0),
            rand_tensor(rng, &[m], 1.0),
            rand_tensor(rng, &[m], 1.0),
        ];
        Ok(grad_check(
            "dualfc",
            &inputs,
            |t, v| {
                let p = DualFcVars {
                    w1: v[1],
                    w2: v[2],
                    b1: v[3],
                    b2: v[4],
                    a1: v[5],
                    a2: v[6],
                };
                t.dualfc(v[0], p)
            },
            &gc,
        )?)
    })
}

fn softmax_xent(cfg: &SuiteConfig) -> Result<GradReport> {
    rows("softmax_xent", cfg, 7, |rng, gc| {
        let rows_n = rng.random_range(1..=3);
        let targets: Vec<usize> = (0..rows_n).map(|_| rng.random_range(0..256)).collect();
        let inputs = [rand_tensor(rng, &[rows_n, 256], 3.0)];
        Ok(grad_check(
            "softmax_xent",
            &inputs,
            |t, v| t.softmax_cross_entropy(v[0], &targets),
            &gc,
        )?)
    })
}

/// Gradient check of a graph over the model tensors whose names start with
/// `prefix`; the remaining tensors enter as constants.
pub fn check_model_graph<F>(
    name: &str,
    params: &ModelParams,
    prefix: &str,
    build: F,
    gc: &GradCheckConfig,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let checked: Vec<(&String, &Tensor)> = params
        .tensors()
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .collect();
    let inputs: Vec<Tensor> = checked.iter().map(|(_, t)| (*t).clone()).collect();
    let report = grad_check(
        name,
        &inputs,
        |t, vars| {
            let mut map: BTreeMap<String, Var> = checked
                .iter()
                .zip(vars)
                .map(|((k, _), &v)| ((*k).clone(), v))
                .collect();
            for (k, tensor) in params.tensors() {
                if !k.starts_with(prefix) {
                    map.insert(k.clone(), t.constant(tensor.clone()));
                }
            }
            build(t, &BoundParams::from_vars(map)).map_err(|e| match e {
                crate::Error::Numerics(e) => e,
                other => crate::numerics::NumericsError::Tape(other.to_string()),
            })
        },
        gc,
    )?;
    Ok(report)
}

/// Parameters with nonzero biases so no unit sits exactly at a ReLU kink.
fn jittered(arch: ArchConfig, seed: u64) -> Result<ModelParams> {
    let params = ModelParams::init(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let tensors = params
        .tensors()
        .iter()
        .map(|(k, t)| {
            let mut t = t.clone();
            if k.ends_with("bias") || k.ends_with(".b") || k.ends_with(".b1") || k.ends_with(".b2") {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
            (k.clone(), t)
        })
        .collect();
    ModelParams::from_tensors(arch, tensors)
}

/// Default-width coder stack with strides scaled to 2 everywhere (K = 32) on
/// a 320-sample input; checks a random subset of coordinates per tensor.
pub fn coder_stack(cfg: &SuiteConfig) -> Result<GradReport> {
    let coder = CoderConfig {
        conv: CoderConfig::default()
            .conv
            .iter()
            .map(|c| ConvLayer::new(c.channels, c.kernel, 2))
            .collect(),
        ..CoderConfig::default()
    };
    let voder = VoderConfig {
        feat_dim: coder.feat_dim,
        frame_size: coder.frame_size(),
        cond_channels: 2,
        cond_dim: 2,
        embed_dim: 2,
        gru1_hidden: 2,
        gru2_hidden: 2,
        ..VoderConfig::default()
    };
    let arch = ArchConfig { coder, voder };
    let params = jittered(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 8);
    let x = rand_tensor(&mut rng, &[1, 320], 0.5);
    let coder_cfg = params.arch().coder.clone();
    check_model_graph(
        "coder_stack",
        &params,
        "coder.",
        |t, p| {
            let xv = t.constant(x.clone());
            coder_graph(t, p, xv, &coder_cfg)
        },
        &cfg.check_cfg(cfg.seed, Some(24)),
    )
}

/// Small architecture for the end-to-end check: K = 4, two frames.
pub fn tiny_end_to_end_arch() -> ArchConfig {
    ArchConfig {
        coder: CoderConfig {
            conv: vec![ConvLayer::new(2, 3, 2), ConvLayer::new(3, 3, 2)],
            dense_dim: 3,
            gru_hidden: 3,
            feat_dim: 2,
        },
        voder: VoderConfig {
            feat_dim: 2,
            cond_kernel: 3,
            cond_channels: 3,
            cond_dim: 3,
            embed_dim: 3,
            gru1_hidden: 4,
            gru2_hidden: 3,
            frame_size: 4,
        },
    }
}

/// Full teacher-forced loss (coder → voder → cross-entropy) with respect to
/// every parameter of a tiny model.
pub fn end_to_end(cfg: &SuiteConfig) -> Result<GradReport> {
    let params = jittered(tiny_end_to_end_arch(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 9);
    let t_len = 8;
    let item = BatchItem {
        coder_input: (0..t_len).map(|_| rng.random_range(-0.8..0.8)).collect(),
        prev_levels: (0..t_len).map(|_| rng.random_range(0..256)).collect(),
        targets: (0..t_len).map(|_| rng.random_range(0..256)).collect(),
    };
    let arch = params.arch().clone();
    check_model_graph(
        "end_to_end",
        &params,
        "",
        |t, p| Ok(item_loss_graph(t, p, &item, &arch)?.0),
        &cfg.check_cfg(cfg.seed, None),
    )
}

/// Every row of the suite, in a fixed order.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<GradReport>> {
    Ok(vec![
        conv1d(cfg)?,
        maxpool(cfg)?,
        dense(cfg)?,
        gru(cfg)?,
        embedding(cfg)?,
        dualfc(cfg)?,
        softmax_xent(cfg)?,
        coder_stack(cfg)?,
        end_to_end(cfg)?,
    ])
}
