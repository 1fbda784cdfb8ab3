//! `sedkit`: command-line frontend for the sound event detection toolkit.
//!
//! Subcommands cover the full workflow: corpus statistics, feature
//! extraction, synthetic corpus generation, training, evaluation, and the
//! gamma sweep. Text outputs start with a provenance header (toolkit
//! version, seed, config hash); all outputs are written atomically and
//! removed again if the command fails. `SED_THREADS` caps per-clip
//! parallelism without changing any result.

mod dataset;
mod outputs;

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use sedkit_core::eventroll::{self, EventAnnotation, FrameParams};
use sedkit_core::features::{self, FeatureMatrix, MelParams};
use sedkit_core::metrics::SegmentParams;
use sedkit_core::model::checkpoint;
use sedkit_core::synthgen;
use sedkit_core::trainer::{self, ModelShape, TrainConfig};

use dataset::{files_with_extension, load_dataset, stem_of, LoadedDataset};
use outputs::{provenance_line, OutputGuard};

#[derive(Parser)]
#[command(
    name = "sedkit",
    version = sedkit_core::VERSION,
    about = "Sound event detection toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-class duration statistics for a directory of annotation TSVs
    Stats {
        /// Directory containing .tsv annotation files
        annot_dir: PathBuf,
    },
    /// Extract log mel-band energy features from WAV files
    Extract {
        /// Directory containing .wav files
        wav_dir: PathBuf,
        /// Output directory for .sedf feature files
        out_dir: PathBuf,
    },
    /// Generate a synthetic corpus from a spec file
    Synth {
        /// Corpus spec file (key = value with [class] sections)
        spec: PathBuf,
        /// Output directory for the corpus
        out_dir: PathBuf,
    },
    /// Train a model on a data directory
    Train {
        /// Training config file (key = value)
        config: PathBuf,
        /// Directory of .sedf features with matching .tsv annotations
        data_dir: PathBuf,
        /// Checkpoint output path (.sedm); history TSV is written next to it
        ckpt: PathBuf,
    },
    /// Evaluate a checkpoint on a data directory
    Eval {
        /// Checkpoint produced by `train`
        ckpt: PathBuf,
        /// Directory of .sedf features with matching .tsv annotations
        data_dir: PathBuf,
        /// Detection threshold on the sigmoid output
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Segment length in seconds for the metrics
        #[arg(long, default_value_t = 1.0)]
        segment_length: f64,
    },
    /// Train once per gamma and tabulate macro/micro-F
    Sweep {
        /// Training config file; its loss settings apply per gamma
        config: PathBuf,
        /// Directory used for both training and evaluation
        data_dir: PathBuf,
        /// Comma-separated gamma values
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Segment length in seconds for the metrics
        #[arg(long, default_value_t = 1.0)]
        segment_length: f64,
        /// Also write the table to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn setup_threads() -> Result<()> {
    if let Ok(value) = env::var("SED_THREADS") {
        let threads: usize = value
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("SED_THREADS must be a positive integer, got {value:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match setup_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats { annot_dir } => cmd_stats(&annot_dir),
        Command::Extract { wav_dir, out_dir } => cmd_extract(&wav_dir, &out_dir),
        Command::Synth { spec, out_dir } => cmd_synth(&spec, &out_dir),
        Command::Train {
            config,
            data_dir,
            ckpt,
        } => cmd_train(&config, &data_dir, &ckpt),
        Command::Eval {
            ckpt,
            data_dir,
            threshold,
            segment_length,
        } => cmd_eval(&ckpt, &data_dir, threshold, segment_length),
        Command::Sweep {
            config,
            data_dir,
            gammas,
            segment_length,
            out,
        } => cmd_sweep(&config, &data_dir, gammas.as_deref(), segment_length, out.as_deref()),
    }
}

fn segment_params(segment_length: f64) -> Result<SegmentParams> {
    if !(segment_length > 0.0) || !segment_length.is_finite() {
        bail!("--segment-length must be positive, got {segment_length}");
    }
    Ok(SegmentParams { segment_length })
}

fn cmd_stats(annot_dir: &Path) -> Result<()> {
    let mut annotations = Vec::new();
    for path in files_with_extension(annot_dir, "tsv")? {
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        // Durations are unknown here; an unreachable bound disables clamping.
        let clip = eventroll::parse_annotations(&text, f64::INFINITY)
            .with_context(|| format!("parsing {}", path.display()))?;
        annotations.push(clip.with_clip_id(stem_of(&path)));
    }
    let vocabulary = eventroll::build_vocabulary(&annotations);
    let stats = eventroll::duration_stats(&annotations, &vocabulary, &FrameParams::default());
    print!("{}{}", provenance_line(None, None), stats.render_tsv());
    Ok(())
}

fn cmd_extract(wav_dir: &Path, out_dir: &Path) -> Result<()> {
    let wavs = files_with_extension(wav_dir, "wav")?;
    if wavs.is_empty() {
        bail!("no .wav files in {}", wav_dir.display());
    }
    let params = MelParams::default();
    let extracted: Vec<(String, FeatureMatrix)> = wavs
        .par_iter()
        .map(|path| -> Result<(String, FeatureMatrix)> {
            let audio =
                features::read_wav(path).with_context(|| format!("reading {}", path.display()))?;
            let mel = features::log_mel(&audio, &params)
                .with_context(|| format!("extracting {}", path.display()))?;
            Ok((stem_of(path), mel))
        })
        .collect::<Result<_>>()?;

    let mut guard = OutputGuard::new();
    guard.ensure_dir(out_dir)?;
    for (stem, mel) in &extracted {
        let path = out_dir.join(format!("{stem}.sedf"));
        guard.stage(&path, |tmp| features::write_features(tmp, mel))?;
    }
    guard.commit();
    Ok(())
}

fn annotation_tsv(events: &[EventAnnotation]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&format!("{}\t{}\t{}\n", e.onset, e.offset, e.label));
    }
    out
}

fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec = synthgen::parse_spec_file(&text)
        .with_context(|| format!("parsing spec {}", spec_path.display()))?;
    let head = provenance_line(Some(spec.seed), Some(text.as_bytes()));

    let clips = (0..spec.n_clips)
        .into_par_iter()
        .map(|index| synthgen::generate_clip(&spec, index))
        .collect::<sedkit_core::Result<Vec<_>>>()?;

    let mut guard = OutputGuard::new();
    guard.ensure_dir(out_dir)?;
    let mut annotations = Vec::with_capacity(clips.len());
    for (features, _roll, clip) in &clips {
        let base = out_dir.join(&clip.clip_id);
        guard.stage(&base.with_extension("sedf"), |tmp| {
            features::write_features(tmp, features)
        })?;
        guard.write(
            &base.with_extension("tsv"),
            annotation_tsv(&clip.events).as_bytes(),
        )?;
        annotations.push(clip.clone());
    }

    let vocabulary = spec.vocabulary();
    let mut labels = head.clone();
    for label in vocabulary.classes() {
        labels.push_str(label);
        labels.push('\n');
    }
    guard.write(&out_dir.join("labels.txt"), labels.as_bytes())?;
    guard.write(
        &out_dir.join("frame.kv"),
        format!(
            "{head}window = {}\nhop = {}\n",
            spec.frame.window, spec.frame.hop
        )
        .as_bytes(),
    )?;
    // .txt rather than .tsv so data-dir consumers treating every .tsv as a
    // clip annotation file never pick it up.
    let stats = eventroll::duration_stats(&annotations, &vocabulary, &spec.frame);
    guard.write(
        &out_dir.join("corpus_stats.txt"),
        format!("{head}{}", stats.render_tsv()).as_bytes(),
    )?;
    guard.write(
        &out_dir.join("corpus.spec"),
        format!("{head}{text}").as_bytes(),
    )?;
    guard.commit();
    Ok(())
}

fn load_config(path: &Path) -> Result<(String, TrainConfig, ModelShape)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let (cfg, shape) = trainer::parse_train_config(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok((text, cfg, shape))
}

/// Fits normalization on the loaded features and returns the normalized
/// dataset alongside the stats.
fn normalized_dataset(
    loaded: LoadedDataset,
) -> Result<(
    Vec<(FeatureMatrix, eventroll::EventRoll)>,
    features::NormStats,
    eventroll::Vocabulary,
    FrameParams,
)> {
    let norm = features::fit_norm(&loaded.features)?;
    let mut dataset = Vec::with_capacity(loaded.features.len());
    for (f, roll) in loaded.features.iter().zip(loaded.rolls.into_iter()) {
        dataset.push((features::apply_norm(f, &norm)?, roll));
    }
    Ok((dataset, norm, loaded.vocabulary, loaded.frame))
}

fn cmd_train(config_path: &Path, data_dir: &Path, ckpt_path: &Path) -> Result<()> {
    let (config_text, cfg, shape) = load_config(config_path)?;
    let loaded = load_dataset(data_dir)?;
    let (dataset, norm, _, _) = normalized_dataset(loaded)?;
    let (params, history) = trainer::train_model(&dataset, &shape, None, &cfg)?;

    let mut guard = OutputGuard::new();
    if let Some(parent) = ckpt_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        guard.ensure_dir(parent)?;
    }
    guard.stage(ckpt_path, |tmp| {
        checkpoint::save_checkpoint(tmp, &params, &norm)
    })?;
    let head = provenance_line(Some(cfg.seed), Some(config_text.as_bytes()));
    guard.write(
        &ckpt_path.with_extension("history.tsv"),
        format!("{head}{}", history.render_tsv()).as_bytes(),
    )?;
    guard.commit();
    Ok(())
}

fn cmd_eval(ckpt_path: &Path, data_dir: &Path, threshold: f64, segment_length: f64) -> Result<()> {
    let sp = segment_params(segment_length)?;
    let (params, norm) = checkpoint::load_checkpoint(ckpt_path)?;
    let loaded = load_dataset(data_dir)?;
    if loaded.vocabulary.len() != params.config().n_classes {
        bail!(
            "checkpoint has {} classes but {} provides {} (is labels.txt present?)",
            params.config().n_classes,
            data_dir.display(),
            loaded.vocabulary.len()
        );
    }
    let vocabulary = loaded.vocabulary.clone();
    let frame = loaded.frame;
    let mut dataset = Vec::with_capacity(loaded.features.len());
    for (f, roll) in loaded.features.iter().zip(loaded.rolls.into_iter()) {
        dataset.push((features::apply_norm(f, &norm)?, roll));
    }
    let report = trainer::evaluate_model(&params, &dataset, &frame, sp, threshold)?;

    let ckpt_bytes = fs::read(ckpt_path)?;
    let head = provenance_line(None, Some(&ckpt_bytes));
    let tsv = format!("{head}{}", report.render_tsv(&vocabulary)?);
    let kv = format!("{head}{}", report.render_kv(&vocabulary)?);
    let mut guard = OutputGuard::new();
    guard.write(&ckpt_path.with_extension("eval.tsv"), tsv.as_bytes())?;
    guard.write(&ckpt_path.with_extension("eval.kv"), kv.as_bytes())?;
    guard.commit();
    print!("{tsv}");
    Ok(())
}

fn cmd_sweep(
    config_path: &Path,
    data_dir: &Path,
    gammas: Option<&[f64]>,
    segment_length: f64,
    out: Option<&Path>,
) -> Result<()> {
    let sp = segment_params(segment_length)?;
    let gammas = gammas.unwrap_or(&trainer::DEFAULT_GAMMA_GRID);
    let (config_text, cfg, shape) = load_config(config_path)?;
    let loaded = load_dataset(data_dir)?;
    let (dataset, _, _, frame) = normalized_dataset(loaded)?;
    let rows = trainer::gamma_sweep(&dataset, &dataset, gammas, &cfg, &shape, &frame, sp)?;

    let head = provenance_line(Some(cfg.seed), Some(config_text.as_bytes()));
    let table = format!("{head}{}", trainer::render_sweep_tsv(&rows));
    if let Some(path) = out {
        let mut guard = OutputGuard::new();
        guard.write(path, table.as_bytes())?;
        guard.commit();
    }
    print!("{table}");
    Ok(())
}
