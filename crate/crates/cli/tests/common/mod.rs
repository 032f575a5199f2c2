//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rawnet::model::{ArchConfig, ModelParams};
use rawnet::signal::{wav_write, AudioClip};
use rawnet::trainer::{OptimizerConfig, TrainConfig, Trainer};

pub fn rawnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawnet"))
        .args(args)
        .output()
        .expect("spawn rawnet")
}

/// Temp paths are UTF-8 in practice; this keeps argument lists readable.
pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Panics with the captured streams unless the run exited with `code`.
pub fn expect_code(o: &Output, code: i32) {
    assert_eq!(
        o.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(o),
        stderr(o)
    );
}

pub fn save_params(params: ModelParams, path: &Path) -> PathBuf {
    let cfg = TrainConfig {
        clip_samples: params.arch().frame_size(),
        ..TrainConfig::default()
    };
    Trainer::from_params(params, cfg, OptimizerConfig::default())
        .unwrap()
        .checkpoint()
        .save(path)
        .unwrap();
    path.to_path_buf()
}

pub fn init_checkpoint(dir: &Path, arch: ArchConfig, seed: u64) -> PathBuf {
    save_params(ModelParams::init(arch, seed).unwrap(), &dir.join(format!("init{seed}.rwnc")))
}

pub fn write_clip(dir: &Path, name: &str, clip: &AudioClip) -> PathBuf {
    let p = dir.join(name);
    wav_write(clip, &p).unwrap();
    p
}

/// `step,loss` lines after the header.
pub fn loss_lines(o: &Output) -> Vec<String> {
    let out = stdout(o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("step,loss"));
    lines.map(str::to_string).collect()
}
