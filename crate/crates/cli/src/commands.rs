use std::ffi::OsString;
use std::path::{Path, PathBuf};

use rawnet::coder::coder_forward;
use rawnet::gradsuite::{run_suite, SuiteConfig};
use rawnet::model::ArchConfig;
use rawnet::signal::{
    estimate_pitch, snr_db, vad_denoise, vad_keep_mask, wav_read, wav_write, AudioClip, PitchFrame,
};
use rawnet::trainer::{Checkpoint, Dataset, Trainer};
use rawnet::voder::{copy_synthesis, synthesize, SamplerConfig};

use crate::error::{CliError, Result};
use crate::featfile::{features_csv, features_pgm, read_features, write_features};
use crate::settings::CliConfig;
use crate::{
    AnalyzeArgs, ArchPreset, Cli, Command, CopySynArgs, DenoiseArgs, DumpFeaturesArgs, GradcheckArgs,
    SamplerArgs, SynthesizeArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Analyze(a) => analyze(a),
        Command::Synthesize(a) => synthesize_cmd(a),
        Command::CopySyn(a) => copy_syn(a),
        Command::Denoise(a) => denoise(a),
        Command::DumpFeatures(a) => dump_features(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Defaults => {
            print!("{}", CliConfig::default_text());
            Ok(())
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(CliError::in_file(path))
}

fn read_wav(path: &Path) -> Result<AudioClip> {
    wav_read(path).map_err(|e| CliError::in_file(path)(e.into()))
}

fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    wav_write(clip, path).map_err(|e| CliError::in_file(path)(e.into()))
}

/// Mono WAVs in `dir`, by file name. Unreadable files are skipped with a
/// warning so one bad file does not sink a run.
fn load_clips(dir: &Path) -> Result<Vec<AudioClip>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();
    let mut clips = Vec::with_capacity(paths.len());
    for p in paths {
        match wav_read(&p) {
            Ok(clip) => clips.push(clip),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(clips)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = CliConfig::load_or_default(a.config.as_deref())?;
    match a.arch {
        Some(ArchPreset::Tiny) => cfg.arch = ArchConfig::tiny(),
        Some(ArchPreset::Default) => cfg.arch = ArchConfig::default(),
        None => {}
    }
    let t = &mut cfg.train;
    override_with(&mut t.steps, a.steps);
    override_with(&mut t.seed, a.seed);
    override_with(&mut t.batch_size, a.batch_size);
    override_with(&mut t.clip_samples, a.clip_samples);
    override_with(&mut t.checkpoint_interval, a.checkpoint_interval);
    override_with(&mut t.noise.voder_sigma, a.voder_sigma);
    override_with(&mut t.noise.coder_sigma, a.coder_sigma);
    override_with(&mut cfg.opt.lr, a.lr);

    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(load_checkpoint(path)?, cfg.train.clone()),
        None => Trainer::new(cfg.arch.clone(), cfg.train.clone(), cfg.opt.clone()),
    }
    .map_err(usage_if_config)?;
    let data = Dataset::new(load_clips(&a.data_dir)?, cfg.train.clip_samples)?;

    let save = |trainer: &Trainer| {
        trainer
            .checkpoint()
            .save(&a.checkpoint_out)
            .map_err(CliError::in_file(&a.checkpoint_out))
    };
    let interval = cfg.train.checkpoint_interval;
    println!("step,loss");
    while trainer.step_count() < cfg.train.steps {
        let report = trainer.step(&data)?;
        println!("{},{}", report.step, report.loss);
        if interval > 0 && trainer.step_count() % interval == 0 {
            save(&trainer)?;
        }
    }
    save(&trainer)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let clip = read_wav(&a.wav_in)?;
    let feats = coder_forward(&clip, &ck.params).map_err(CliError::in_file(&a.wav_in))?;
    write_features(&feats, &a.feat_out)?;
    println!("n_frames={} feat_dim={}", feats.n_frames, feats.feat_dim);
    Ok(())
}

/// Config file, then flags. Draws (and reports) a seed when a random sampler
/// has none.
fn resolve_sampler(a: &SamplerArgs) -> Result<(SamplerConfig, CliConfig)> {
    let cfg = CliConfig::load_or_default(a.config.as_deref())?;
    let mut s = cfg.sampler.clone();
    override_with(&mut s.strategy, a.sampler);
    override_with(&mut s.c, a.c);
    override_with(&mut s.pc_gain, a.pc_gain);
    s.seed = match a.seed.or(cfg.sampler_seed) {
        Some(seed) => seed,
        None => {
            let seed = rand::random();
            if s.strategy.is_random() {
                log::warn!(
                    "no --seed given for {} sampling; using random seed {seed}, output is not reproducible",
                    s.strategy
                );
            }
            seed
        }
    };
    s.validate().map_err(usage_if_config)?;
    Ok((s, cfg))
}

fn synthesize_cmd(a: SynthesizeArgs) -> Result<()> {
    let (sampler, cfg) = resolve_sampler(&a.sampler)?;
    if sampler.strategy.needs_pitch() && a.pitch_from.is_none() && a.pitch_file.is_none() {
        return Err(CliError::Usage(format!(
            "--sampler {} needs --pitch-from <wav> or --pitch-file <csv>",
            sampler.strategy
        )));
    }
    let feats = read_features(&a.feat_in)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let pitch = match (&a.pitch_from, &a.pitch_file) {
        (Some(wav), _) => Some(estimate_pitch(&read_wav(wav)?, feats.frame_size)),
        (None, Some(csv)) => Some(read_pitch_csv(csv)?),
        (None, None) => None,
    };
    let pitch = pitch.filter(|_| sampler.strategy.needs_pitch());
    let mut out = synthesize(&feats, &ck.params, &sampler, pitch.as_deref()).map_err(CliError::in_file(&a.feat_in))?;
    if a.sampler.denoise {
        out = vad_denoise(&out, &cfg.vad).map_err(|e| CliError::Core(e.into()))?;
    }
    write_wav(&out, &a.wav_out)?;
    println!("samples={}", out.len());
    Ok(())
}

/// `period,correlation` per line; an optional header line and `#` comments
/// are skipped.
fn read_pitch_csv(path: &Path) -> Result<Vec<PitchFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |n: usize, line: &str| CliError::Data(format!("{}:{n}: expected `period,correlation`, got `{line}`", path.display()));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let (p, c) = line.split_once(',').ok_or_else(|| bad(i + 1, line))?;
        let period: usize = p.trim().parse().map_err(|_| bad(i + 1, line))?;
        let corr: f64 = c.trim().parse().map_err(|_| bad(i + 1, line))?;
        if !corr.is_finite() {
            return Err(bad(i + 1, line));
        }
        out.push(PitchFrame::from_measurement(period, corr));
    }
    Ok(out)
}

fn copy_syn(a: CopySynArgs) -> Result<()> {
    let (sampler, cfg) = resolve_sampler(&a.sampler)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let clip = read_wav(&a.wav_in)?;
    let denoise = a.sampler.denoise.then_some(&cfg.vad);
    let out = copy_synthesis(&clip, &ck.params, &sampler, denoise).map_err(CliError::in_file(&a.wav_in))?;
    write_wav(&out, &a.wav_out)?;
    if out.len() == clip.len() {
        println!("samples={} snr_db={:.4}", out.len(), snr_db(&clip.samples, &out.samples));
    } else {
        println!("samples={} (input {}, no SNR)", out.len(), clip.len());
    }
    Ok(())
}

fn denoise(a: DenoiseArgs) -> Result<()> {
    let mut vad = CliConfig::load_or_default(a.config.as_deref())?.vad;
    override_with(&mut vad.threshold_db, a.threshold_db);
    override_with(&mut vad.hangover_frames, a.hangover_frames);
    override_with(&mut vad.frame_size, a.frame_size);
    vad.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let clip = read_wav(&a.wav_in)?;
    let keep = vad_keep_mask(&clip.samples, &vad);
    let out = vad_denoise(&clip, &vad).map_err(|e| CliError::Core(e.into()))?;
    write_wav(&out, &a.wav_out)?;
    let gated = keep.iter().filter(|k| !**k).count();
    println!("frames={} gated={gated}", keep.len());
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn dump_features(a: DumpFeaturesArgs) -> Result<()> {
    let feats = read_features(&a.feat_in)?;
    let csv = with_suffix(&a.out_prefix, "csv");
    let pgm = with_suffix(&a.out_prefix, "pgm");
    std::fs::write(&csv, features_csv(&feats)).map_err(|e| CliError::io(&csv, e))?;
    std::fs::write(&pgm, features_pgm(&feats)).map_err(|e| CliError::io(&pgm, e))?;
    println!("{} {}", csv.display(), pgm.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = SuiteConfig {
        seed: a.seed,
        plant_fault: a.plant_fault,
        ..SuiteConfig::default()
    };
    let rows = run_suite(&cfg)?;
    println!("{:<16} {:>12} {:>8} {:>6}  status", "op", "max_rel_err", "checked", "kinks");
    for r in &rows {
        println!(
            "{:<16} {:>12.3e} {:>8} {:>6}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.kinks,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

fn override_with<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

/// Configuration rejected by the library is the caller's mistake.
fn usage_if_config(e: rawnet::Error) -> CliError {
    match e {
        rawnet::Error::Config(msg) => CliError::Usage(msg),
        other => CliError::Core(other),
    }
}
