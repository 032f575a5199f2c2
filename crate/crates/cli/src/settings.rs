//! The `--config` file: every architecture, training, sampler and VAD knob as
//! `key = value` lines. Keys absent from the file keep their defaults and
//! unknown keys are rejected. [`CliConfig::default_text`] lists every key.

use std::path::Path;

use rawnet::config::KvMap;
use rawnet::model::ArchConfig;
use rawnet::signal::VadConfig;
use rawnet::trainer::{OptimizerConfig, TrainConfig};
use rawnet::voder::SamplerConfig;

use crate::error::{CliError, Result};

/// Written for `sampler.seed` when sampling should draw a fresh seed.
const RANDOM_SEED: &str = "random";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CliConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub opt: OptimizerConfig,
    /// `sampler.seed` is ignored here; see `sampler_seed`.
    pub sampler: SamplerConfig,
    /// `None` means pick one at random (and say so on stderr).
    pub sampler_seed: Option<u64>,
    pub vad: VadConfig,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        KvMap::parse(text)
            .and_then(Self::from_kv)
            .map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        KvMap::parse(&text)
            .and_then(Self::from_kv)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn from_kv(mut kv: KvMap) -> rawnet::Result<Self> {
        let mut c = Self::default();
        c.arch = c.arch.read_kv(&mut kv)?;
        let t = &mut c.train;
        kv.take_into("train.clip_samples", &mut t.clip_samples)?;
        kv.take_into("train.batch_size", &mut t.batch_size)?;
        kv.take_into("train.steps", &mut t.steps)?;
        kv.take_into("train.seed", &mut t.seed)?;
        kv.take_into("train.checkpoint_interval", &mut t.checkpoint_interval)?;
        kv.take_into("train.grad_clip", &mut t.grad_clip)?;
        kv.take_into("noise.voder_sigma", &mut t.noise.voder_sigma)?;
        kv.take_into("noise.coder_sigma", &mut t.noise.coder_sigma)?;
        t.validate(&c.arch)?;
        kv.take_into("opt.lr", &mut c.opt.lr)?;
        kv.take_into("opt.beta1", &mut c.opt.beta1)?;
        kv.take_into("opt.beta2", &mut c.opt.beta2)?;
        kv.take_into("opt.eps", &mut c.opt.eps)?;
        c.opt.validate()?;
        kv.take_into("sampler.strategy", &mut c.sampler.strategy)?;
        kv.take_into("sampler.c", &mut c.sampler.c)?;
        kv.take_into("sampler.pc_gain", &mut c.sampler.pc_gain)?;
        c.sampler_seed = match kv.take_str("sampler.seed") {
            None => None,
            Some(s) if s == RANDOM_SEED => None,
            Some(s) => Some(
                s.parse()
                    .map_err(|e| rawnet::Error::Config(format!("bad value for `sampler.seed`: {e}")))?,
            ),
        };
        c.sampler.validate()?;
        kv.take_into("vad.frame_size", &mut c.vad.frame_size)?;
        kv.take_into("vad.threshold_db", &mut c.vad.threshold_db)?;
        kv.take_into("vad.hangover_frames", &mut c.vad.hangover_frames)?;
        c.vad.validate()?;
        kv.finish()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        self.arch.write_kv(&mut kv);
        let t = &self.train;
        kv.insert("train.clip_samples", t.clip_samples);
        kv.insert("train.batch_size", t.batch_size);
        kv.insert("train.steps", t.steps);
        kv.insert("train.seed", t.seed);
        kv.insert("train.checkpoint_interval", t.checkpoint_interval);
        kv.insert("train.grad_clip", t.grad_clip);
        kv.insert("noise.voder_sigma", t.noise.voder_sigma);
        kv.insert("noise.coder_sigma", t.noise.coder_sigma);
        kv.insert("opt.lr", self.opt.lr);
        kv.insert("opt.beta1", self.opt.beta1);
        kv.insert("opt.beta2", self.opt.beta2);
        kv.insert("opt.eps", self.opt.eps);
        kv.insert("sampler.strategy", self.sampler.strategy);
        kv.insert("sampler.c", self.sampler.c);
        kv.insert("sampler.pc_gain", self.sampler.pc_gain);
        match self.sampler_seed {
            Some(s) => kv.insert("sampler.seed", s),
            None => kv.insert("sampler.seed", RANDOM_SEED),
        }
        kv.insert("vad.frame_size", self.vad.frame_size);
        kv.insert("vad.threshold_db", self.vad.threshold_db);
        kv.insert("vad.hangover_frames", self.vad.hangover_frames);
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn default_text() -> String {
        Self::default().to_text()
    }
}
