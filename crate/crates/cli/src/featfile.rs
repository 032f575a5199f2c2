//! Binary feature files written by `analyze` and read by `synthesize`.
//!
//! Layout: magic `RWNF`, then five little-endian `u32`s (version, n_frames,
//! feat_dim, frame_size, sample_rate), then `n_frames · feat_dim` row-major
//! little-endian `f32`s. Nothing may follow the payload.

use std::path::Path;

use rawnet::coder::FeatureMatrix;

use crate::error::{CliError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"RWNF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

pub fn encode_features(feats: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + feats.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [
        FEATURE_VERSION,
        feats.n_frames as u32,
        feats.feat_dim as u32,
        feats.frame_size as u32,
        feats.sample_rate,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &feats.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FeatureMatrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err("bad magic, not a feature file".into());
    }
    let word = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
    };
    let version = word(0);
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version}, expected {FEATURE_VERSION}"));
    }
    let (n_frames, feat_dim, frame_size, sample_rate) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4));
    let expected = n_frames
        .checked_mul(feat_dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or("header dimensions overflow")?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(format!(
            "payload is {} bytes, header implies {expected} ({n_frames} x {feat_dim} floats)",
            payload.len()
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(values, n_frames, feat_dim, frame_size, sample_rate).map_err(|e| e.to_string())
}

pub fn write_features(feats: &FeatureMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(feats)).map_err(|e| CliError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_features(&bytes).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
}

/// One CSV row per frame, values printed in shortest round-trip form.
pub fn features_csv(feats: &FeatureMatrix) -> String {
    let mut out = String::new();
    for t in 0..feats.n_frames {
        let row: Vec<String> = feats.row(t).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Binary PGM with frames along x and feature dimensions along y (dimension
/// 0 on the top row). Values are min-max scaled over the whole matrix; a
/// constant matrix renders as mid gray.
pub fn features_pgm(feats: &FeatureMatrix) -> Vec<u8> {
    let (lo, hi) = feats
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", feats.n_frames, feats.feat_dim).into_bytes();
    for d in 0..feats.feat_dim {
        for t in 0..feats.n_frames {
            let v = feats.values[t * feats.feat_dim + d];
            let px = if range > 0.0 && range.is_finite() {
                (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            };
            out.push(px);
        }
    }
    out
}
