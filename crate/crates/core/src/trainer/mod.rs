//! Joint coder + voder training with teacher forcing, noise injection and
//! AMSGrad.

mod checkpoint;
mod optimizer;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optimizer::{amsgrad_step, AmsGrad, Moments, OptimizerConfig};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coder::coder_graph;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, BoundParams, ModelParams};
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::signal::{inject_noise, AudioClip, MuLawCodec, NoiseConfig, MULAW_MID_LEVEL};
use crate::voder::voder_teacher_graph;

/// RNG stream used for batch sampling (initialization uses the default stream).
const BATCH_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub clip_samples: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_interval: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_samples: 3200,
            batch_size: 16,
            steps: 1000,
            noise: NoiseConfig::default(),
            seed: 0,
            checkpoint_interval: 100,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        let k = arch.frame_size();
        if self.clip_samples == 0 || !self.clip_samples.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "clip_samples {} must be a positive multiple of the frame size {k}",
                self.clip_samples
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.noise.voder_sigma >= 0.0) || !(self.noise.coder_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be >= 0".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Clips long enough to cut training windows from.
#[derive(Clone, Debug)]
pub struct Dataset {
    clips: Vec<AudioClip>,
}

impl Dataset {
    /// Keeps clips of at least `clip_samples` samples, warning about the rest.
    pub fn new(clips: Vec<AudioClip>, clip_samples: usize) -> Result<Self> {
        let total = clips.len();
        let clips: Vec<AudioClip> = clips
            .into_iter()
            .enumerate()
            .filter(|(i, c)| {
                let ok = c.len() >= clip_samples;
                if !ok {
                    log::warn!(
                        "skipping clip {i}: {} samples is shorter than the {clip_samples}-sample window",
                        c.len()
                    );
                }
                ok
            })
            .map(|(_, c)| c)
            .collect();
        if clips.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "none of {total} clips has at least {clip_samples} samples"
            )));
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[AudioClip] {
        &self.clips
    }
}

/// One teacher-forced training example.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    /// Noisy window fed to the coder.
    pub coder_input: Vec<f64>,
    /// Levels of the noisy window shifted right by one, starting at 128.
    pub prev_levels: Vec<usize>,
    /// Levels of the clean window.
    pub targets: Vec<usize>,
}

impl BatchItem {
    pub fn from_window(window: &[f64], noise: &NoiseConfig, rng: &mut impl Rng) -> Result<Self> {
        let codec = MuLawCodec::default();
        let coder_input = inject_noise(window, noise.coder_sigma, rng);
        let noisy = inject_noise(window, noise.voder_sigma, rng);
        let mut prev_levels = Vec::with_capacity(window.len());
        prev_levels.push(MULAW_MID_LEVEL);
        prev_levels.extend(codec.encode_all(&noisy[..window.len() - 1])?);
        let targets = codec.encode_all(window)?;
        Ok(Self {
            coder_input,
            prev_levels,
            targets,
        })
    }
}

/// Random windows with noise injection; targets come from the clean window.
pub fn make_batch(data: &Dataset, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<BatchItem>> {
    (0..cfg.batch_size)
        .map(|_| {
            let clip = &data.clips[rng.random_range(0..data.clips.len())];
            let start = rng.random_range(0..=clip.len() - cfg.clip_samples);
            BatchItem::from_window(&clip.samples[start..start + cfg.clip_samples], &cfg.noise, rng)
        })
        .collect()
}

/// Records coder → voder → mean cross-entropy for one item; returns
/// `(loss, logits)`.
pub fn item_loss_graph(tape: &mut Tape, p: &BoundParams, item: &BatchItem, arch: &ArchConfig) -> Result<(Var, Var)> {
    let x = tape.constant(Tensor::new(vec![1, item.coder_input.len()], item.coder_input.clone())?);
    let feats = coder_graph(tape, p, x, &arch.coder)?;
    let logits = voder_teacher_graph(tape, p, feats, &item.prev_levels, &arch.voder)?;
    let loss = tape.softmax_cross_entropy(logits, &item.targets)?;
    Ok((loss, logits))
}

/// Mean loss and mean gradients over a batch.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn norm_of(&self, name: &str) -> f64 {
        self.grads.get(name).map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn item_gradients(params: &ModelParams, item: &BatchItem) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let (loss, _) = item_loss_graph(&mut tape, &p, item, params.arch())?;
    tape.backward(loss)?;
    let grads = p.iter().map(|(name, &v)| (name.clone(), tape.grad_or_zeros(v))).collect();
    Ok((tape.value(loss).data()[0], grads))
}

/// Forward/backward of every item (in parallel, one tape each), summed in
/// item order and divided by the batch size.
pub fn compute_gradients(params: &ModelParams, batch: &[BatchItem]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let per_item: Vec<_> = batch.par_iter().map(|item| item_gradients(params, item)).collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in per_item {
        let (l, g) = r?;
        loss += l;
        for (name, gi) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name, gi);
                }
            }
        }
    }
    for g in grads.values_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(Gradients {
        loss: loss * scale,
        grads,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Gradients, finiteness checks, global-norm clipping and one optimizer update.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut AmsGrad,
    batch: &[BatchItem],
    grad_clip: f64,
    step: u64,
) -> Result<StepReport> {
    if let Some((name, _)) = params.tensors().iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite {
            step,
            tensor: name.clone(),
        });
    }
    let mut g = compute_gradients(params, batch).map_err(|e| match e {
        Error::Numerics(NumericsError::NonFinite { op }) => Error::NonFinite {
            step,
            tensor: format!("{op} input (logits)"),
        },
        other => other,
    })?;
    if !g.loss.is_finite() {
        return Err(Error::NonFinite {
            step,
            tensor: "loss".into(),
        });
    }
    if let Some((name, _)) = g.grads.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite {
            step,
            tensor: format!("gradient of {name}"),
        });
    }
    let grad_norm = g.global_norm();
    if grad_clip > 0.0 && grad_norm > grad_clip {
        let s = grad_clip / grad_norm;
        g.grads.values_mut().flatten().for_each(|v| *v *= s);
    }
    opt.apply(params, &g.grads)?;
    if let Some((name, _)) = params.tensors().iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite {
            step,
            tensor: name.clone(),
        });
    }
    Ok(StepReport {
        step,
        loss: g.loss,
        grad_norm,
    })
}

/// Training loop state. Everything that influences future steps lives here
/// and round-trips through [`Checkpoint`].
pub struct Trainer {
    pub params: ModelParams,
    pub opt: AmsGrad,
    pub cfg: TrainConfig,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh parameters from `cfg.seed`.
    pub fn new(arch: ArchConfig, cfg: TrainConfig, opt_cfg: OptimizerConfig) -> Result<Self> {
        let params = ModelParams::init(arch, cfg.seed)?;
        Self::from_params(params, cfg, opt_cfg)
    }

    pub fn from_params(params: ModelParams, cfg: TrainConfig, opt_cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate(params.arch())?;
        opt_cfg.validate()?;
        let opt = AmsGrad::new(opt_cfg, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(BATCH_STREAM);
        Ok(Self {
            params,
            opt,
            cfg,
            step: 0,
            rng,
        })
    }

    /// Continues from a checkpoint; `cfg` supplies the non-persisted knobs.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(ck.params.arch())?;
        Ok(Self {
            params: ck.params,
            opt: ck.optimizer,
            cfg,
            step: ck.step,
            rng: ck.rng,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, data: &Dataset) -> Result<StepReport> {
        let batch = make_batch(data, &self.cfg, &mut self.rng)?;
        let report = train_step(&mut self.params, &mut self.opt, &batch, self.cfg.grad_clip, self.step)?;
        self.step += 1;
        log::debug!("step {} loss {:.6} |g| {:.4}", report.step, report.loss, report.grad_norm);
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.opt.clone(),
            step: self.step,
            rng: self.rng.clone(),
        }
    }
}

/// Fraction of positions where the teacher-forced argmax equals the target.
pub fn teacher_forced_accuracy(params: &ModelParams, item: &BatchItem) -> Result<f64> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let (_, logits) = item_loss_graph(&mut tape, &p, item, params.arch())?;
    let lv = tape.value(logits);
    let hits = lv
        .data()
        .chunks_exact(lv.cols())
        .zip(&item.targets)
        .filter(|(row, &t)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == t
        })
        .count();
    Ok(hits as f64 / item.targets.len() as f64)
}

/// Mean teacher-forced loss of `item` without updating anything.
pub fn evaluate_loss(params: &ModelParams, item: &BatchItem) -> Result<f64> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let (loss, _) = item_loss_graph(&mut tape, &p, item, params.arch())?;
    Ok(tape.value(loss).data()[0])
}

#[derive(Clone, Debug)]
pub struct OverfitRun {
    pub params: ModelParams,
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// The fixed noise-free example trained on.
    pub item: BatchItem,
}

/// Trains on the first `clip_samples` samples of `clip` with no noise,
/// batch size 1, for `steps` updates.
pub fn overfit_single_clip(
    clip: &AudioClip,
    steps: u64,
    arch: ArchConfig,
    clip_samples: usize,
    seed: u64,
    opt_cfg: OptimizerConfig,
) -> Result<OverfitRun> {
    if clip.len() < clip_samples {
        return Err(Error::InputTooShort {
            len: clip.len(),
            need: clip_samples,
        });
    }
    let window = AudioClip::new(clip.samples[..clip_samples].to_vec(), clip.sample_rate);
    let cfg = TrainConfig {
        clip_samples,
        batch_size: 1,
        steps,
        noise: NoiseConfig::silent(),
        seed,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(arch, cfg, opt_cfg)?;
    let data = Dataset::new(vec![window.clone()], clip_samples)?;
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        losses.push(trainer.step(&data)?.loss);
    }
    let item = BatchItem::from_window(&window.samples, &NoiseConfig::silent(), &mut trainer.rng)?;
    Ok(OverfitRun {
        params: trainer.params,
        losses,
        item,
    })
}
