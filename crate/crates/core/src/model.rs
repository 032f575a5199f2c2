//! Architecture description and the named parameter bundle shared by the
//! coder and the voder.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coder::{ConvLayer, CoderConfig};
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::numerics::{DualFcVars, GruVars, LayerSpec, ParamInit, Tape, Tensor, Var};
use crate::voder::VoderConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArchConfig {
    pub coder: CoderConfig,
    pub voder: VoderConfig,
}

impl ArchConfig {
    /// Small model used for desk-scale training runs: coder channels halved,
    /// 64-unit first GRU.
    pub fn tiny() -> Self {
        let coder = CoderConfig {
            conv: vec![
                ConvLayer::new(8, 9, 2),
                ConvLayer::new(16, 9, 2),
                ConvLayer::new(32, 9, 2),
                ConvLayer::new(64, 9, 4),
                ConvLayer::new(64, 9, 5),
            ],
            dense_dim: 64,
            gru_hidden: 64,
            feat_dim: 32,
        };
        let voder = VoderConfig {
            feat_dim: 32,
            cond_kernel: 3,
            cond_channels: 64,
            cond_dim: 64,
            embed_dim: 64,
            gru1_hidden: 64,
            gru2_hidden: 32,
            frame_size: 160,
        };
        Self { coder, voder }
    }

    pub fn validate(&self) -> Result<()> {
        self.coder.validate()?;
        self.voder.validate()?;
        if self.voder.feat_dim != self.coder.feat_dim {
            return Err(Error::Config(format!(
                "voder feat_dim {} differs from coder feat_dim {}",
                self.voder.feat_dim, self.coder.feat_dim
            )));
        }
        if self.voder.frame_size != self.coder.frame_size() {
            return Err(Error::Config(format!(
                "voder frame size {} differs from the coder stride product {}",
                self.voder.frame_size,
                self.coder.frame_size()
            )));
        }
        Ok(())
    }

    pub fn frame_size(&self) -> usize {
        self.coder.frame_size()
    }

    /// All layers with fully qualified name stems (`coder.conv0`, `voder.gru1`, ...).
    pub fn layers(&self) -> Vec<(String, LayerSpec)> {
        let coder = self.coder.layers().into_iter().map(|(n, s)| (format!("coder.{n}"), s));
        let voder = self.voder.layers().into_iter().map(|(n, s)| (format!("voder.{n}"), s));
        coder.chain(voder).collect()
    }

    /// Every parameter tensor the architecture owns, in initialization order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, ParamInit)> {
        let mut out = Vec::new();
        for (stem, spec) in self.layers() {
            for (suffix, shape, init) in spec.param_shapes() {
                out.push((format!("{stem}.{suffix}"), shape, init));
            }
        }
        out
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        let conv: Vec<String> = self.coder.conv.iter().map(ToString::to_string).collect();
        kv.insert("coder.conv", conv.join(","));
        kv.insert("coder.dense_dim", self.coder.dense_dim);
        kv.insert("coder.gru_hidden", self.coder.gru_hidden);
        kv.insert("coder.feat_dim", self.coder.feat_dim);
        kv.insert("voder.cond_kernel", self.voder.cond_kernel);
        kv.insert("voder.cond_channels", self.voder.cond_channels);
        kv.insert("voder.cond_dim", self.voder.cond_dim);
        kv.insert("voder.embed_dim", self.voder.embed_dim);
        kv.insert("voder.gru1_hidden", self.voder.gru1_hidden);
        kv.insert("voder.gru2_hidden", self.voder.gru2_hidden);
    }

    /// Overrides fields of `self` from any architecture keys present in `kv`.
    pub fn read_kv(mut self, kv: &mut KvMap) -> Result<Self> {
        if let Some(conv) = kv.take_str("coder.conv") {
            self.coder.conv = conv
                .split(',')
                .map(|s| s.parse::<ConvLayer>().map_err(Error::Config))
                .collect::<Result<_>>()?;
        }
        kv.take_into("coder.dense_dim", &mut self.coder.dense_dim)?;
        kv.take_into("coder.gru_hidden", &mut self.coder.gru_hidden)?;
        kv.take_into("coder.feat_dim", &mut self.coder.feat_dim)?;
        kv.take_into("voder.cond_kernel", &mut self.voder.cond_kernel)?;
        kv.take_into("voder.cond_channels", &mut self.voder.cond_channels)?;
        kv.take_into("voder.cond_dim", &mut self.voder.cond_dim)?;
        kv.take_into("voder.embed_dim", &mut self.voder.embed_dim)?;
        kv.take_into("voder.gru1_hidden", &mut self.voder.gru1_hidden)?;
        kv.take_into("voder.gru2_hidden", &mut self.voder.gru2_hidden)?;
        self.voder.feat_dim = self.coder.feat_dim;
        self.voder.frame_size = self.coder.frame_size();
        self.validate()?;
        Ok(self)
    }
}

/// Named weights of a full coder + voder model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit DualFC scales. Values are
    /// rounded to 32-bit precision so they survive a checkpoint unchanged.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in arch.param_specs() {
            let mut t = Tensor::zeros(&shape);
            match init {
                ParamInit::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in t.data_mut() {
                        *v = rng.random_range(-a..a) as f32 as f64;
                    }
                }
                ParamInit::Zeros => {}
                ParamInit::Ones => t.data_mut().fill(1.0),
            }
            tensors.insert(name, t);
        }
        Ok(Self { arch, tensors })
    }

    /// Wraps existing tensors, checking that names and shapes match `arch` exactly.
    pub fn from_tensors(arch: ArchConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs();
        for (name, shape, _) in &specs {
            let t = tensors.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors
                .keys()
                .find(|k| !specs.iter().any(|(n, _, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Config(format!("unexpected parameter tensor `{extra}`")));
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Mutable access for optimizers; shapes must not change.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Places every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn gru(&self, stem: &str) -> Result<GruVars> {
        Ok(GruVars {
            w: self.var(&format!("{stem}.w"))?,
            u: self.var(&format!("{stem}.u"))?,
            b: self.var(&format!("{stem}.b"))?,
        })
    }

    pub fn dualfc(&self, stem: &str) -> Result<DualFcVars> {
        let v = |s: &str| self.var(&format!("{stem}.{s}"));
        Ok(DualFcVars {
            w1: v("w1")?,
            w2: v("w2")?,
            b1: v("b1")?,
            b2: v("b2")?,
            a1: v("a1")?,
            a2: v("a2")?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
