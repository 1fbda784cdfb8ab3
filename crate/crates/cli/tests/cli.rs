//! End-to-end tests driving the `sedkit` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sedkit_core::eventroll::FrameParams;
use sedkit_core::features::{write_wav, AudioBuffer};
use sedkit_core::synthgen::{self, ClassSpec, SynthSpec, TemplateKind};

fn sedkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sedkit"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning sedkit");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning sedkit");
    assert!(!out.status.success(), "command unexpectedly passed: {cmd:?}");
    assert!(
        !out.stderr.is_empty(),
        "failing command printed nothing to stderr: {cmd:?}"
    );
    out
}

/// Small two-class corpus spec on 1 s clips, cheap enough for training tests.
fn tiny_spec(n_clips: usize, seed: u64) -> SynthSpec {
    let class = |name: &str, kind, median, rate, noise| ClassSpec {
        name: name.into(),
        duration_median: median,
        duration_sigma: 0.2,
        kind,
        rate,
        amplitude: 3.0,
        noise_scale: noise,
    };
    SynthSpec {
        classes: vec![
            class("tone_a", TemplateKind::Stationary, 0.5, 1.2, 0.1),
            class("click_b", TemplateKind::Transient, 0.2, 1.5, 0.3),
        ],
        clip_length: 1.0,
        n_clips,
        background_level: -3.0,
        background_noise: 0.2,
        frame: FrameParams::default(),
        seed,
    }
}

fn write_tiny_corpus(dir: &Path, n_clips: usize, seed: u64) -> PathBuf {
    let spec_path = dir.join("corpus.specfile");
    fs::write(&spec_path, synthgen::render_spec_file(&tiny_spec(n_clips, seed))).unwrap();
    let corpus = dir.join("corpus");
    run_ok(sedkit().arg("synth").arg(&spec_path).arg(&corpus));
    corpus
}

fn tiny_train_config(epochs: usize, extra: &str) -> String {
    format!(
        "epochs = {epochs}\nclips_per_batch = 4\nlearning_rate = 0.003\nseed = 11\n\
         conv_channels = 8,8,8\npool_freq = 8,4,2\ngru_units = 8\ndense_units = 8\n{extra}"
    )
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn synth_writes_corpus_and_is_thread_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = tmp.path().join("c.specfile");
    fs::write(&spec_path, synthgen::render_spec_file(&tiny_spec(5, 3))).unwrap();

    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    run_ok(sedkit()
        .arg("synth")
        .arg(&spec_path)
        .arg(&dir_a)
        .env("SED_THREADS", "1"));
    run_ok(sedkit()
        .arg("synth")
        .arg(&spec_path)
        .arg(&dir_b)
        .env("SED_THREADS", "2"));

    let snap_a = dir_snapshot(&dir_a);
    assert_eq!(snap_a, dir_snapshot(&dir_b), "outputs depend on thread count");

    let names: Vec<&str> = snap_a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "clip00000.sedf",
        "clip00000.tsv",
        "clip00004.sedf",
        "clip00004.tsv",
        "labels.txt",
        "frame.kv",
        "corpus_stats.txt",
        "corpus.spec",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    let stats = fs::read_to_string(dir_a.join("corpus_stats.txt")).unwrap();
    assert!(stats.starts_with("# sedkit "), "missing provenance header");
    assert!(stats.contains("seed=3"));
}

#[test]
fn stats_reports_synth_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 6, 5);
    let out = run_ok(sedkit().arg("stats").arg(&corpus));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# sedkit "));
    assert!(text.contains("class\tmean_duration_s\tinstances\tframes"));
    assert!(text.contains("tone_a"));
    assert!(text.contains("click_b"));
}

#[test]
fn stats_on_empty_directory_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_ok(sedkit().arg("stats").arg(tmp.path()));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "expected only headers, got {text:?}");
}

#[test]
fn extract_produces_expected_frame_count() {
    let tmp = tempfile::tempdir().unwrap();
    let wav_dir = tmp.path().join("wavs");
    fs::create_dir(&wav_dir).unwrap();
    let rate = 16000u32;
    let samples: Vec<f64> = (0..rate * 2)
        .map(|t| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * t as f64 / rate as f64).sin())
        .collect();
    write_wav(
        &wav_dir.join("sine.wav"),
        &AudioBuffer::new(rate, samples).unwrap(),
    )
    .unwrap();

    let out_dir = tmp.path().join("feats");
    run_ok(sedkit().arg("extract").arg(&wav_dir).arg(&out_dir));
    let mel = sedkit_core::features::read_features(&out_dir.join("sine.sedf")).unwrap();
    // 2 s at a 40 ms window and 20 ms hop.
    assert_eq!(mel.n_frames(), 99);
    assert_eq!(mel.n_dims(), 64);
}

#[test]
fn train_then_eval_produces_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 8, 7);
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(2, "loss = bce\n")).unwrap();
    let ckpt = tmp.path().join("run").join("model.sedm");

    run_ok(sedkit().arg("train").arg(&config).arg(&corpus).arg(&ckpt));
    assert!(ckpt.exists());
    let history = fs::read_to_string(tmp.path().join("run").join("model.history.tsv")).unwrap();
    assert!(history.starts_with("# sedkit "));
    assert!(history.contains("epoch\tloss\tmacro_F\tmicro_F"));
    assert_eq!(history.lines().count(), 2 + 2, "one row per epoch");

    let out = run_ok(sedkit().arg("eval").arg(&ckpt).arg(&corpus));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("class\tF\tER"));
    assert!(text.contains("macro_F"));
    let kv = fs::read_to_string(tmp.path().join("run").join("model.eval.kv")).unwrap();
    assert!(kv.contains("macro_f="));
    assert!(kv.contains("class.tone_a.f="));
}

#[test]
fn zero_gamma_duration_robust_matches_bce_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 6, 13);

    let bce_cfg = tmp.path().join("bce.kv");
    fs::write(&bce_cfg, tiny_train_config(2, "loss = bce\n")).unwrap();
    let dr_cfg = tmp.path().join("dr.kv");
    fs::write(
        &dr_cfg,
        tiny_train_config(2, "loss = duration_robust\ngamma = 0\n"),
    )
    .unwrap();

    let bce_ckpt = tmp.path().join("bce.sedm");
    let dr_ckpt = tmp.path().join("dr.sedm");
    run_ok(sedkit().arg("train").arg(&bce_cfg).arg(&corpus).arg(&bce_ckpt));
    run_ok(sedkit().arg("train").arg(&dr_cfg).arg(&corpus).arg(&dr_ckpt));
    assert_eq!(
        fs::read(&bce_ckpt).unwrap(),
        fs::read(&dr_ckpt).unwrap(),
        "gamma=0 training diverged from bce"
    );

    let bce_eval = run_ok(sedkit().arg("eval").arg(&bce_ckpt).arg(&corpus));
    let dr_eval = run_ok(sedkit().arg("eval").arg(&dr_ckpt).arg(&corpus));
    // Outputs differ only in the checkpoint-derived config hash line.
    let body = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&bce_eval), body(&dr_eval));
}

#[test]
fn train_is_reproducible_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 6, 17);
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(2, "loss = duration_robust\ngamma = 1\n")).unwrap();

    let first = tmp.path().join("first.sedm");
    let second = tmp.path().join("second.sedm");
    run_ok(sedkit()
        .arg("train")
        .arg(&config)
        .arg(&corpus)
        .arg(&first)
        .env("SED_THREADS", "1"));
    run_ok(sedkit()
        .arg("train")
        .arg(&config)
        .arg(&corpus)
        .arg(&second)
        .env("SED_THREADS", "3"));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn sweep_default_grid_emits_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 4, 19);
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(1, "")).unwrap();

    let table_path = tmp.path().join("sweep.tsv");
    let out = run_ok(sedkit()
        .arg("sweep")
        .arg(&config)
        .arg(&corpus)
        .arg("--out")
        .arg(&table_path));
    let text = String::from_utf8(out.stdout).unwrap();
    let data_rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("gamma"))
        .collect();
    assert_eq!(data_rows.len(), 5, "default grid: {text}");
    for (row, gamma) in data_rows.iter().zip(["0.25", "0.5", "1", "2", "4"]) {
        assert!(row.starts_with(gamma), "row {row} vs gamma {gamma}");
    }
    assert_eq!(fs::read_to_string(&table_path).unwrap(), text);
}

#[test]
fn sweep_accepts_gamma_list() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 4, 23);
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(1, "")).unwrap();
    let out = run_ok(sedkit()
        .arg("sweep")
        .arg(&config)
        .arg(&corpus)
        .arg("--gammas")
        .arg("0,2"));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("gamma"))
            .count(),
        2
    );
}

#[test]
fn failures_exit_nonzero_and_leave_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 4, 29);

    // Unknown flag.
    run_err(sedkit().arg("stats").arg(&corpus).arg("--bogus"));

    // Missing config file: checkpoint must not appear.
    let ckpt = tmp.path().join("out").join("model.sedm");
    run_err(sedkit()
        .arg("train")
        .arg(tmp.path().join("missing.kv"))
        .arg(&corpus)
        .arg(&ckpt));
    assert!(!ckpt.exists());
    assert!(!tmp.path().join("out").exists(), "created dir not removed");

    // Corrupt feature file.
    let bad_dir = tmp.path().join("bad");
    fs::create_dir(&bad_dir).unwrap();
    fs::write(bad_dir.join("x.sedf"), b"not a feature file").unwrap();
    fs::write(bad_dir.join("x.tsv"), b"").unwrap();
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(2, "")).unwrap();
    run_err(sedkit()
        .arg("train")
        .arg(&config)
        .arg(&bad_dir)
        .arg(tmp.path().join("m.sedm")));

    // Feature file without annotations.
    let orphan_dir = tmp.path().join("orphan");
    fs::create_dir(&orphan_dir).unwrap();
    fs::copy(
        corpus.join("clip00000.sedf"),
        orphan_dir.join("clip00000.sedf"),
    )
    .unwrap();
    run_err(sedkit()
        .arg("train")
        .arg(&config)
        .arg(&orphan_dir)
        .arg(tmp.path().join("m2.sedm")));

    // Bad SED_THREADS value.
    run_err(sedkit().arg("stats").arg(&corpus).env("SED_THREADS", "zero"));
}

#[test]
fn eval_threshold_and_segment_flags_are_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_tiny_corpus(tmp.path(), 6, 31);
    let config = tmp.path().join("train.kv");
    fs::write(&config, tiny_train_config(2, "loss = bce\n")).unwrap();
    let ckpt = tmp.path().join("model.sedm");
    run_ok(sedkit().arg("train").arg(&config).arg(&corpus).arg(&ckpt));

    run_ok(sedkit()
        .arg("eval")
        .arg(&ckpt)
        .arg(&corpus)
        .arg("--threshold")
        .arg("0.3")
        .arg("--segment-length")
        .arg("0.5"));
    run_err(sedkit()
        .arg("eval")
        .arg(&ckpt)
        .arg(&corpus)
        .arg("--threshold")
        .arg("1.5"));
    run_err(sedkit()
        .arg("eval")
        .arg(&ckpt)
        .arg(&corpus)
        .arg("--segment-length")
        .arg("0"));
}
