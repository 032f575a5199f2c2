//! Binary checkpoint: model weights, optimizer moments, RNG position and step.
//!
//! Layout (little-endian): `"RWNC"`, u32 version, u32 header length, UTF-8
//! `key = value` header, then one record per tensor: u32 name length, name,
//! u32 rank, u64 per dimension, f32 values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::optimizer::{AmsGrad, Moments, OptimizerConfig};
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RWNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: AmsGrad,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor), CheckpointError> {
        let name_len = self.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32(&format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u64(&format!("shape of {name}"))? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("shape of {name} overflows")))?;
        let raw = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed(format!("shape of {name} overflows")))?,
            &format!("values of {name}"),
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

const MOMENT_PREFIXES: [&str; 3] = ["opt.m/", "opt.v/", "opt.vhat/"];

impl Checkpoint {
    pub fn arch(&self) -> &ArchConfig {
        self.params.arch()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut kv = KvMap::default();
        self.params.arch().write_kv(&mut kv);
        let o = &self.optimizer.cfg;
        kv.insert("opt.lr", o.lr);
        kv.insert("opt.beta1", o.beta1);
        kv.insert("opt.beta2", o.beta2);
        kv.insert("opt.eps", o.eps);
        kv.insert("step", self.step);
        kv.insert("rng.seed", hex(&self.rng.get_seed()));
        kv.insert("rng.stream", self.rng.get_stream());
        kv.insert("rng.word_pos", self.rng.get_word_pos());
        let n_params = self.params.tensors().len();
        kv.insert("tensors", n_params * 4);
        let header = kv.to_text();

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (name, t) in self.params.tensors() {
            write_tensor(&mut out, name, t);
        }
        for (k, prefix) in MOMENT_PREFIXES.iter().enumerate() {
            for (name, t) in self.params.tensors() {
                let st = &self.optimizer.state[name];
                let buf = [&st.m, &st.v, &st.vhat][k];
                let mt = Tensor::new(t.shape().to_vec(), buf.clone()).expect("moment shape matches its tensor");
                write_tensor(&mut out, &format!("{prefix}{name}"), &mt);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|_| CheckpointError::Malformed("header is not UTF-8".into()))?;
        let malformed = |e: Error| CheckpointError::Malformed(e.to_string());
        let mut kv = KvMap::parse(header).map_err(malformed)?;
        let arch = ArchConfig::default()
            .read_kv(&mut kv)
            .map_err(|e| CheckpointError::ArchitectureMismatch(e.to_string()))?;
        let opt = OptimizerConfig {
            lr: kv.take_required("opt.lr").map_err(malformed)?,
            beta1: kv.take_required("opt.beta1").map_err(malformed)?,
            beta2: kv.take_required("opt.beta2").map_err(malformed)?,
            eps: kv.take_required("opt.eps").map_err(malformed)?,
        };
        let step: u64 = kv.take_required("step").map_err(malformed)?;
        let seed_hex: String = kv.take_required("rng.seed").map_err(malformed)?;
        let seed = unhex32(&seed_hex).ok_or_else(|| CheckpointError::Malformed("bad rng.seed".into()))?;
        let stream: u64 = kv.take_required("rng.stream").map_err(malformed)?;
        let word_pos: u128 = kv.take_required("rng.word_pos").map_err(malformed)?;
        let n_tensors: usize = kv.take_required("tensors").map_err(malformed)?;
        kv.finish().map_err(malformed)?;

        let mut tensors = BTreeMap::new();
        let mut moments: [BTreeMap<String, Vec<f64>>; 3] = Default::default();
        for _ in 0..n_tensors {
            let (name, t) = r.tensor()?;
            let slot = MOMENT_PREFIXES
                .iter()
                .position(|p| name.starts_with(p));
            let dup = match slot {
                Some(k) => moments[k]
                    .insert(name[MOMENT_PREFIXES[k].len()..].to_string(), t.into_data())
                    .is_some(),
                None => tensors.insert(name.clone(), t).is_some(),
            };
            if dup {
                return Err(CheckpointError::Malformed(format!("duplicate tensor `{name}`")).into());
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            ))
            .into());
        }
        let params = ModelParams::from_tensors(arch, tensors)
            .map_err(|e| CheckpointError::ArchitectureMismatch(e.to_string()))?;
        let [mut m, mut v, mut vhat] = moments;
        let mut state = BTreeMap::new();
        for (name, t) in params.tensors() {
            let take = |map: &mut BTreeMap<String, Vec<f64>>| {
                map.remove(name)
                    .filter(|d| d.len() == t.len())
                    .ok_or_else(|| CheckpointError::Malformed(format!("missing or misshapen optimizer state for `{name}`")))
            };
            state.insert(
                name.clone(),
                Moments {
                    m: take(&mut m)?,
                    v: take(&mut v)?,
                    vhat: take(&mut vhat)?,
                },
            );
        }
        if let Some(extra) = m.keys().chain(v.keys()).chain(vhat.keys()).next() {
            return Err(CheckpointError::Malformed(format!("optimizer state for unknown tensor `{extra}`")).into());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            params,
            optimizer: AmsGrad { cfg: opt, state },
            step,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Loads and additionally requires the stored architecture to equal `arch`.
    pub fn load_expecting(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.arch() != arch {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "stored {:?}, expected {:?}",
                ck.arch(),
                arch
            ))
            .into());
        }
        Ok(ck)
    }
}
