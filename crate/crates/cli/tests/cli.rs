mod common;

use std::fs;

use common::*;
use proptest::prelude::*;
use rawnet::coder::FeatureMatrix;
use rawnet::fixtures::{buzz_model, harmonic_clip, tone_with_buzz};
use rawnet::model::ArchConfig;
use rawnet::signal::{estimate_pitch, frame_energy, wav_read, AudioClip};
use rawnet::trainer::Checkpoint;
use rawnet_cli::featfile::{decode_features, encode_features, features_csv, features_pgm, read_features};
use rawnet_cli::settings::CliConfig;
use tempfile::tempdir;

fn matrix(values: Vec<f32>, n_frames: usize, feat_dim: usize) -> FeatureMatrix {
    FeatureMatrix::new(values, n_frames, feat_dim, 160, 16_000).unwrap()
}

// ------------------------------------------------------------ feature file

proptest! {
    #[test]
    fn feature_file_round_trip_is_byte_exact(
        n_frames in 1usize..12,
        feat_dim in 1usize..20,
        seed in any::<u32>(),
    ) {
        let values: Vec<f32> = (0..n_frames * feat_dim)
            .map(|i| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(i as u32 * 40_503) & 0x3fff_ffff))
            .collect();
        let m = matrix(values, n_frames, feat_dim);
        let bytes = encode_features(&m);
        prop_assert_eq!(bytes.len(), 24 + n_frames * feat_dim * 4);
        let back = decode_features(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode_features(&back), bytes);
    }
}

#[test]
fn feature_file_rejects_damage() {
    let bytes = encode_features(&matrix(vec![0.5; 6], 2, 3));
    assert!(decode_features(&bytes[..10]).unwrap_err().contains("truncated"));
    assert!(decode_features(&bytes[..bytes.len() - 1]).unwrap_err().contains("payload"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_features(&long).unwrap_err().contains("payload"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_features(&magic).unwrap_err().contains("magic"));
    let mut version = bytes;
    version[4] = 9;
    assert!(decode_features(&version).unwrap_err().contains("version"));
}

#[test]
fn csv_and_pgm_layout() {
    let values: Vec<f32> = (0..20 * 64).map(|i| (i as f32 * 0.731).sin() * 1e-3).collect();
    let m = matrix(values, 20, 64);
    let csv = features_csv(&m);
    let rows: Vec<Vec<f32>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.len() == 64));
    let flat: Vec<f32> = rows.concat();
    assert_eq!(flat, m.values);

    let pgm = features_pgm(&m);
    let header = b"P5\n20 64\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    let px = &pgm[header.len()..];
    assert_eq!(px.len(), 20 * 64);
    assert_eq!(px.iter().min(), Some(&0));
    assert_eq!(px.iter().max(), Some(&255));
    // Row d, column t holds feature d of frame t.
    let (t, d) = (7, 5);
    let v = m.values[t * 64 + d];
    let (lo, hi) = m.values.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    assert_eq!(px[d * 20 + t], (((v - lo) / (hi - lo)) * 255.0).round() as u8);

    let flat_pgm = features_pgm(&matrix(vec![3.25; 12], 4, 3));
    assert!(flat_pgm.ends_with(&[128; 12]));
}

// ------------------------------------------------------------------ config

#[test]
fn default_config_text_round_trips() {
    let text = CliConfig::default_text();
    assert_eq!(CliConfig::parse(&text).unwrap(), CliConfig::default());
    for key in ["coder.conv", "train.clip_samples", "opt.lr", "sampler.c", "vad.threshold_db", "noise.voder_sigma"] {
        assert!(text.contains(key), "{key}");
    }
    let cfg = CliConfig::parse("sampler.seed = 7\ntrain.steps = 3 # short\n").unwrap();
    assert_eq!(cfg.sampler_seed, Some(7));
    assert_eq!(cfg.train.steps, 3);
}

#[test]
fn unknown_or_invalid_config_keys_are_usage_errors() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.stepz = 3\n").unwrap();
    let o = rawnet(&["train", s(dir.path()), s(&dir.path().join("x.rwnc")), "--config", s(&cfg)]);
    expect_code(&o, 2);
    assert!(stderr(&o).contains("train.stepz"));

    fs::write(&cfg, "sampler.c = -1\n").unwrap();
    let o = rawnet(&["copy-syn", "in.wav", "ck", "out.wav", "--config", s(&cfg)]);
    expect_code(&o, 2);
    let o = rawnet(&["copy-syn", "in.wav", "ck", "out.wav", "--c", "nan"]);
    expect_code(&o, 2);
    assert!(CliConfig::parse("train.clip_samples = 100").is_err());
}

#[test]
fn flags_override_config_file() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_clip(&data, "a.wav", &harmonic_clip(3200, 80.0));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "train.steps = 5\ntrain.batch_size = 1\ncoder.conv = 8:9:2,8:9:2,8:9:2,8:9:4,8:9:5\n").unwrap();
    let ck = dir.path().join("out.rwnc");
    let o = rawnet(&["train", s(&data), s(&ck), "--config", s(&cfg), "--steps", "1"]);
    expect_code(&o, 0);
    assert_eq!(loss_lines(&o).len(), 1);
    let ck = Checkpoint::load(&ck).unwrap();
    assert_eq!(ck.step, 1);
    assert_eq!(ck.arch().coder.conv[0].channels, 8);
}

// ---------------------------------------------------------------- analyze

#[test]
fn analyze_then_synthesize_shapes() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::default(), 0);
    let wav = write_clip(dir.path(), "in.wav", &harmonic_clip(3200, 80.0));
    let feat = dir.path().join("in.rwnf");
    let o = rawnet(&["analyze", s(&wav), s(&ck), s(&feat)]);
    expect_code(&o, 0);
    assert_eq!(stdout(&o).trim(), "n_frames=20 feat_dim=64");
    let m = read_features(&feat).unwrap();
    assert_eq!((m.n_frames, m.feat_dim, m.frame_size, m.sample_rate), (20, 64, 160, 16_000));

    let out_a = dir.path().join("a.wav");
    let out_b = dir.path().join("b.wav");
    for out in [&out_a, &out_b] {
        let o = rawnet(&["synthesize", s(&feat), s(&ck), s(out), "--sampler", "argmax"]);
        expect_code(&o, 0);
        assert_eq!(stdout(&o).trim(), "samples=3200");
    }
    assert_eq!(wav_read(&out_a).unwrap().len(), 3200);
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
}

#[test]
fn corrupt_checkpoint_names_the_file() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 0);
    let mut bytes = fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    let broken = dir.path().join("broken.rwnc");
    fs::write(&broken, bytes).unwrap();
    let wav = write_clip(dir.path(), "in.wav", &harmonic_clip(3200, 80.0));
    let o = rawnet(&["analyze", s(&wav), s(&broken), s(&dir.path().join("f.rwnf"))]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("broken.rwnc"), "{}", stderr(&o));

    let o = rawnet(&["analyze", s(&wav), s(&dir.path().join("missing.rwnc")), s(&dir.path().join("f.rwnf"))]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("missing.rwnc"));
}

// -------------------------------------------------------------- synthesize

#[test]
fn pitch_samplers_need_a_pitch_source() {
    let dir = tempdir().unwrap();
    let f = dir.path().join("f.rwnf");
    for sampler in ["conditional", "pitch_correlation"] {
        let o = rawnet(&["synthesize", s(&f), "ck", "out.wav", "--sampler", sampler, "--seed", "1"]);
        expect_code(&o, 2);
        assert!(stderr(&o).contains("--pitch-from"));
    }
    let o = rawnet(&["synthesize", s(&f), "ck", "out.wav", "--sampler", "loudest"]);
    expect_code(&o, 2);
}

#[test]
fn pitch_file_matches_pitch_from() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 3);
    let clip = harmonic_clip(1600, 90.0);
    let wav = write_clip(dir.path(), "in.wav", &clip);
    let feat = dir.path().join("in.rwnf");
    expect_code(&rawnet(&["analyze", s(&wav), s(&ck), s(&feat)]), 0);

    let mut csv = String::from("period,correlation\n");
    for p in estimate_pitch(&clip, 160) {
        csv.push_str(&format!("{},{}\n", p.period, p.correlation));
    }
    let pitch_csv = dir.path().join("pitch.csv");
    fs::write(&pitch_csv, csv).unwrap();

    let a = dir.path().join("a.wav");
    let b = dir.path().join("b.wav");
    let common = ["--sampler", "conditional", "--seed", "11", "--c", "3"];
    let mut args = vec!["synthesize", s(&feat), s(&ck), s(&a), "--pitch-from", s(&wav)];
    args.extend(common);
    expect_code(&rawnet(&args), 0);
    let mut args = vec!["synthesize", s(&feat), s(&ck), s(&b), "--pitch-file", s(&pitch_csv)];
    args.extend(common);
    expect_code(&rawnet(&args), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    fs::write(&pitch_csv, "80;0.5\n").unwrap();
    let mut args = vec!["synthesize", s(&feat), s(&ck), s(&b), "--pitch-file", s(&pitch_csv)];
    args.extend(common);
    expect_code(&rawnet(&args), 1);
}

#[test]
fn unseeded_random_sampling_warns() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 0);
    let wav = write_clip(dir.path(), "in.wav", &harmonic_clip(320, 80.0));
    let out = dir.path().join("out.wav");
    let o = rawnet(&["copy-syn", s(&wav), s(&ck), s(&out), "--sampler", "multinomial"]);
    expect_code(&o, 0);
    assert!(stderr(&o).contains("random seed"), "{}", stderr(&o));
    let o = rawnet(&["copy-syn", s(&wav), s(&ck), s(&out), "--sampler", "multinomial", "--seed", "4"]);
    expect_code(&o, 0);
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    let o = rawnet(&["copy-syn", s(&wav), s(&ck), s(&out)]);
    assert!(stderr(&o).is_empty(), "argmax needs no seed");
}

// ---------------------------------------------------------------- copy-syn

fn copy_syn_equals_two_step(sampler: &[&str]) {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 5);
    let wav = write_clip(dir.path(), "in.wav", &harmonic_clip(3200, 70.0));
    let direct = dir.path().join("direct.wav");
    let mut args = vec!["copy-syn", s(&wav), s(&ck), s(&direct)];
    args.extend(sampler);
    let o = rawnet(&args);
    expect_code(&o, 0);
    assert!(stdout(&o).starts_with("samples=3200 snr_db="), "{}", stdout(&o));

    let feat = dir.path().join("f.rwnf");
    expect_code(&rawnet(&["analyze", s(&wav), s(&ck), s(&feat)]), 0);
    let two = dir.path().join("two.wav");
    let mut args = vec!["synthesize", s(&feat), s(&ck), s(&two), "--pitch-from", s(&wav)];
    args.extend(sampler);
    expect_code(&rawnet(&args), 0);
    assert_eq!(fs::read(&direct).unwrap(), fs::read(&two).unwrap());
}

#[test]
fn copy_syn_is_analyze_then_synthesize() {
    copy_syn_equals_two_step(&["--sampler", "argmax"]);
    copy_syn_equals_two_step(&["--sampler", "argmax", "--denoise"]);
    copy_syn_equals_two_step(&["--sampler", "pitch-correlation", "--seed", "9", "--pc-gain", "2"]);
}

#[test]
fn copy_syn_rejects_sub_frame_input() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 0);
    let wav = write_clip(dir.path(), "short.wav", &harmonic_clip(100, 80.0));
    let o = rawnet(&["copy-syn", s(&wav), s(&ck), s(&dir.path().join("o.wav"))]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("too short"), "{}", stderr(&o));
}

#[test]
fn copy_syn_reports_length_without_snr_when_padded() {
    let dir = tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ArchConfig::tiny(), 0);
    let wav = write_clip(dir.path(), "in.wav", &harmonic_clip(500, 80.0));
    let o = rawnet(&["copy-syn", s(&wav), s(&ck), s(&dir.path().join("o.wav"))]);
    expect_code(&o, 0);
    assert!(stdout(&o).starts_with("samples=640 "), "{}", stdout(&o));
    assert!(!stdout(&o).contains("snr_db"));
}

/// Mean frame energy over frames where `mask` equals `want`.
fn region_energy(clip: &AudioClip, mask: &[bool], want: bool) -> f64 {
    let e = frame_energy(&clip.samples, 160);
    let sel: Vec<f64> = e.iter().zip(mask).filter(|(_, m)| **m == want).map(|(e, _)| *e).collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

#[test]
fn copy_syn_denoise_on_buzz_model() {
    let dir = tempdir().unwrap();
    let ck = save_params(buzz_model(), &dir.path().join("buzz.rwnc"));
    let (clip, is_tone) = tone_with_buzz(200, 20, 200, 0.0, 0);
    let wav = write_clip(dir.path(), "in.wav", &clip);
    let raw = dir.path().join("raw.wav");
    let clean = dir.path().join("clean.wav");
    expect_code(&rawnet(&["copy-syn", s(&wav), s(&ck), s(&raw)]), 0);
    expect_code(&rawnet(&["copy-syn", s(&wav), s(&ck), s(&clean), "--denoise"]), 0);
    let raw = wav_read(&raw).unwrap();
    let clean = wav_read(&clean).unwrap();
    let before = region_energy(&raw, &is_tone, false);
    let after = region_energy(&clean, &is_tone, false);
    assert!(10.0 * (before / after.max(1e-300)).log10() >= 20.0);
    for ((a, b), tone) in raw.samples.chunks(160).zip(clean.samples.chunks(160)).zip(&is_tone) {
        if *tone {
            assert_eq!(a, b);
        }
    }
}

// ------------------------------------------------------------------ denoise

#[test]
fn denoise_command_gates_quiet_frames() {
    let dir = tempdir().unwrap();
    let (clip, _) = tone_with_buzz(10, 5, 10, 0.001, 1);
    let wav = write_clip(dir.path(), "in.wav", &clip);
    let out = dir.path().join("out.wav");
    let o = rawnet(&["denoise", s(&wav), s(&out), "--hangover-frames", "0", "--threshold-db", "-30"]);
    expect_code(&o, 0);
    assert_eq!(stdout(&o).trim(), "frames=25 gated=20");
    let y = wav_read(&out).unwrap();
    assert!(y.samples[..1600].iter().all(|&v| v == 0.0));
    expect_code(&rawnet(&["denoise", s(&wav), s(&out), "--frame-size", "0"]), 2);
}

// ------------------------------------------------------------ dump-features

#[test]
fn dump_features_writes_csv_and_pgm() {
    let dir = tempdir().unwrap();
    let m = matrix((0..20 * 64).map(|i| i as f32 / 7.0).collect(), 20, 64);
    let feat = dir.path().join("f.rwnf");
    fs::write(&feat, encode_features(&m)).unwrap();
    let prefix = dir.path().join("fig");
    expect_code(&rawnet(&["dump-features", s(&feat), s(&prefix)]), 0);
    let csv = fs::read_to_string(dir.path().join("fig.csv")).unwrap();
    assert_eq!(csv.lines().count(), 20);
    let parsed: Vec<f32> = csv.lines().flat_map(|l| l.split(',').map(|v| v.parse::<f32>().unwrap())).collect();
    assert_eq!(parsed, m.values);
    // Shortest round-trip output never needs more than 9 significant digits.
    for tok in csv.lines().flat_map(|l| l.split(',')) {
        let digits = tok.chars().take_while(|c| *c != 'e').filter(char::is_ascii_digit).collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 9, "{tok}");
    }
    let pgm = fs::read(dir.path().join("fig.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n20 64\n255\n"));

    fs::write(&feat, b"RWNF\x01").unwrap();
    let o = rawnet(&["dump-features", s(&feat), s(&prefix)]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("f.rwnf"));
}

// -------------------------------------------------------------------- train

#[test]
fn train_on_empty_directory_fails() {
    let dir = tempdir().unwrap();
    let o = rawnet(&["train", s(dir.path()), s(&dir.path().join("x.rwnc")), "--arch", "tiny"]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("empty dataset") || stderr(&o).contains("no usable"), "{}", stderr(&o));
    let o = rawnet(&["train", s(&dir.path().join("nope")), s(&dir.path().join("x.rwnc"))]);
    expect_code(&o, 1);
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let dir = tempdir().unwrap();
    write_clip(dir.path(), "a.wav", &harmonic_clip(3200, 80.0));
    fs::write(dir.path().join("notes.txt"), "not audio").unwrap();
    fs::write(dir.path().join("junk.wav"), "not audio either").unwrap();
    let ck = dir.path().join("init.rwnc");
    let o = rawnet(&["train", s(dir.path()), s(&ck), "--arch", "tiny", "--steps", "0", "--seed", "4"]);
    expect_code(&o, 0);
    assert!(loss_lines(&o).is_empty());
    assert!(stderr(&o).contains("junk.wav"));
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.step, 0);
    assert_eq!(loaded.params, rawnet::model::ModelParams::init(ArchConfig::tiny(), 4).unwrap());
}

#[test]
fn first_loss_is_near_uniform() {
    let dir = tempdir().unwrap();
    write_clip(dir.path(), "a.wav", &harmonic_clip(4000, 80.0));
    let ck = dir.path().join("c.rwnc");
    let o = rawnet(&["train", s(dir.path()), s(&ck), "--arch", "tiny", "--steps", "1", "--batch-size", "2"]);
    expect_code(&o, 0);
    let lines = loss_lines(&o);
    let (step, loss) = lines[0].split_once(',').unwrap();
    assert_eq!(step, "0");
    let loss: f64 = loss.parse().unwrap();
    assert!((loss - 256f64.ln()).abs() < 0.2, "loss {loss}");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_clip(&data, "a.wav", &harmonic_clip(4000, 80.0));
    write_clip(&data, "b.wav", &harmonic_clip(3500, 57.0));
    let base = [
        "--arch", "tiny", "--batch-size", "2", "--voder-sigma", "0", "--coder-sigma", "0", "--seed", "8",
        "--checkpoint-interval", "2",
    ];
    let full = dir.path().join("full.rwnc");
    let mut args = vec!["train", s(&data), s(&full), "--steps", "4"];
    args.extend(base);
    let o = rawnet(&args);
    expect_code(&o, 0);
    let full_losses = loss_lines(&o);
    assert_eq!(full_losses.len(), 4);

    let half = dir.path().join("half.rwnc");
    let mut args = vec!["train", s(&data), s(&half), "--steps", "2"];
    args.extend(base);
    let first = loss_lines(&rawnet(&args));
    let rest_ck = dir.path().join("rest.rwnc");
    let mut args = vec!["train", s(&data), s(&rest_ck), "--steps", "4", "--resume", s(&half)];
    args.extend(base);
    let o = rawnet(&args);
    expect_code(&o, 0);
    let resumed: Vec<String> = first.into_iter().chain(loss_lines(&o)).collect();
    assert_eq!(resumed, full_losses);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&rest_ck).unwrap());
}

// ---------------------------------------------------------------- gradcheck

#[test]
fn gradcheck_passes_clean_and_fails_planted() {
    let o = rawnet(&["gradcheck", "--scale", "tiny"]);
    expect_code(&o, 0);
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(rows.len() >= 7);
    for kind in ["conv1d", "maxpool1d", "dense", "gru", "embedding", "dualfc", "softmax_xent", "end_to_end"] {
        let row = rows.iter().find(|r| r.starts_with(kind)).unwrap_or_else(|| panic!("{kind}"));
        let err: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(err <= 1e-4, "{row}");
        assert!(row.ends_with("ok"));
    }

    let o = rawnet(&["gradcheck", "--plant-fault"]);
    expect_code(&o, 1);
    assert!(stderr(&o).contains("dense"));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    expect_code(&rawnet(&["frobnicate"]), 2);
    expect_code(&rawnet(&["analyze", "only-one-arg"]), 2);
    expect_code(&rawnet(&["gradcheck", "--scale", "huge"]), 2);
}
