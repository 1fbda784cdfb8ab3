//! Loading a data directory of `.sedf` feature files with matching `.tsv`
//! annotations into a training/evaluation dataset.
//!
//! Optional sidecar files, both written by `sedkit synth`:
//! `labels.txt` pins the class vocabulary (one label per line) so rolls keep
//! consistent columns even when some class never occurs in the directory;
//! `frame.kv` records the window/hop the features were framed with.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sedkit_core::eventroll::{self, ClipAnnotations, EventRoll, FrameParams, Vocabulary};
use sedkit_core::features::{self, FeatureMatrix};
use sedkit_core::kvfile::KvFile;

pub struct LoadedDataset {
    pub features: Vec<FeatureMatrix>,
    pub rolls: Vec<EventRoll>,
    pub vocabulary: Vocabulary,
    pub frame: FrameParams,
}

/// Files in `dir` with the given extension, sorted by file name.
pub fn files_with_extension(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case(extension))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_frame_params(dir: &Path) -> Result<FrameParams> {
    let path = dir.join("frame.kv");
    if !path.exists() {
        return Ok(FrameParams::default());
    }
    let text = fs::read_to_string(&path)?;
    let doc = KvFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    let defaults = FrameParams::default();
    Ok(FrameParams {
        window: doc.global.f64_or("window", defaults.window)?,
        hop: doc.global.f64_or("hop", defaults.hop)?,
    })
}

fn read_labels(dir: &Path) -> Result<Option<Vocabulary>> {
    let path = dir.join("labels.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        bail!("{} contains no labels", path.display());
    }
    Ok(Some(Vocabulary::from_labels(labels)))
}

/// Loads every `.sedf` clip in the directory along with its annotations.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let frame = read_frame_params(dir)?;
    let feature_paths = files_with_extension(dir, "sedf")?;
    if feature_paths.is_empty() {
        bail!("no .sedf feature files in {}", dir.display());
    }

    let mut features = Vec::with_capacity(feature_paths.len());
    let mut annotations: Vec<ClipAnnotations> = Vec::with_capacity(feature_paths.len());
    for path in &feature_paths {
        let f = features::read_features(path)?;
        let tsv = path.with_extension("tsv");
        let text = fs::read_to_string(&tsv)
            .with_context(|| format!("reading annotations {}", tsv.display()))?;
        // Generous upper bound on the true clip length for clamping; every
        // recording producing n frames is at most this long.
        let duration = f.n_frames() as f64 * frame.hop + frame.window;
        let clip = eventroll::parse_annotations(&text, duration)
            .with_context(|| format!("parsing {}", tsv.display()))?;
        features.push(f);
        annotations.push(clip.with_clip_id(stem_of(path)));
    }

    let vocabulary = match read_labels(dir)? {
        Some(v) => v,
        None => eventroll::build_vocabulary(&annotations),
    };
    let mut rolls = Vec::with_capacity(annotations.len());
    for (clip, f) in annotations.iter().zip(&features) {
        rolls.push(
            eventroll::encode_roll(clip, &vocabulary, &frame, f.n_frames())
                .with_context(|| format!("encoding roll for clip {}", clip.clip_id))?,
        );
    }
    Ok(LoadedDataset {
        features,
        rolls,
        vocabulary,
        frame,
    })
}
