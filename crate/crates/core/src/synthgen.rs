//! Synthetic corpus generation in feature space.
//!
//! Clips are drawn directly as log-energy feature matrices: a Gaussian
//! background plus per-class spectral templates added over sampled event
//! spans. Stationary classes repeat a single template for the whole span;
//! transient classes switch between attack, decay, and release templates,
//! so their spans carry much more frame-to-frame variation. Durations are
//! log-normal and event counts per clip are Poisson.
//!
//! Every clip is a pure function of `(seed, clip_index)` via per-clip RNG
//! substreams, so corpora are reproducible and clips are independent.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};

use crate::error::Error;
use crate::eventroll::{
    self, ClipAnnotations, CorpusStats, EventAnnotation, EventRoll, FrameParams, Vocabulary,
};
use crate::features::FeatureMatrix;
use crate::kvfile::{KvFile, KvMap};
use crate::Result;

/// Feature dimensionality of generated clips, matching the extractor default.
pub const SYNTH_DIMS: usize = 64;

/// RNG stream reserved for template derivation. Clip substreams use the clip
/// index, so no realistic corpus can collide with it.
const TEMPLATE_STREAM: u64 = u64::MAX;

/// Fractions of an event span covered by the attack and decay phases of a
/// transient template; the release phase takes the remainder.
const ATTACK_FRAC: f64 = 0.20;
const DECAY_FRAC: f64 = 0.35;

/// Spectral behavior of a class over an event span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// One fixed template over the whole span.
    Stationary,
    /// Attack, decay, and release templates split over the span.
    Transient,
}

/// One synthetic sound class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    /// Median of the log-normal event duration, seconds.
    pub duration_median: f64,
    /// Shape parameter (standard deviation of the underlying normal).
    pub duration_sigma: f64,
    pub kind: TemplateKind,
    /// Poisson mean of events per clip.
    pub rate: f64,
    /// Peak template lift above the background, log-energy units.
    pub amplitude: f64,
    /// Per-frame jitter standard deviation inside event spans.
    pub noise_scale: f64,
}

/// Full corpus recipe. The spectral template shapes themselves are derived
/// deterministically from `seed`, so a spec fixes the corpus exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ClassSpec>,
    /// Clip length in seconds.
    pub clip_length: f64,
    pub n_clips: usize,
    /// Base log-energy of the background.
    pub background_level: f64,
    /// Standard deviation of the Gaussian background.
    pub background_noise: f64,
    pub frame: FrameParams,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidParameter(
                "synth spec needs at least one class".into(),
            ));
        }
        if !(self.clip_length > 0.0) || !self.clip_length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "clip length must be positive, got {}",
                self.clip_length
            )));
        }
        if !(self.frame.hop > 0.0) || !(self.frame.window >= self.frame.hop) {
            return Err(Error::InvalidParameter(format!(
                "frame params must satisfy window >= hop > 0, got window {} hop {}",
                self.frame.window, self.frame.hop
            )));
        }
        if self.clip_length < self.frame.window {
            return Err(Error::InvalidParameter(format!(
                "clip length {} is shorter than the analysis window {}",
                self.clip_length, self.frame.window
            )));
        }
        if !(self.background_noise >= 0.0) || !self.background_level.is_finite() {
            return Err(Error::InvalidParameter(
                "background level must be finite and noise non-negative".into(),
            ));
        }
        let mut names: Vec<&str> = Vec::with_capacity(self.classes.len());
        for class in &self.classes {
            let name = class.name.as_str();
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidParameter(format!(
                    "class name `{name}` must be non-empty without whitespace"
                )));
            }
            if names.contains(&name) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate class name `{name}`"
                )));
            }
            names.push(name);
            if !(class.duration_median > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "duration median for `{name}` must be positive, got {}",
                    class.duration_median
                )));
            }
            if !(class.duration_sigma >= 0.0) || !(class.rate >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "sigma and rate for `{name}` must be non-negative"
                )));
            }
            if !class.amplitude.is_finite() || !(class.noise_scale >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "amplitude for `{name}` must be finite and noise non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Frame count of one clip, matching what the extractor would produce for
    /// a recording of exactly `clip_length` seconds.
    pub fn n_frames(&self) -> usize {
        ((self.clip_length - self.frame.window) / self.frame.hop + 1e-9) as usize + 1
    }

    /// Sorted class vocabulary; roll columns follow this order.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_labels(self.classes.iter().map(|c| c.name.clone()))
    }
}

/// A generated dataset plus its annotation-side bookkeeping.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub clips: Vec<(FeatureMatrix, EventRoll)>,
    pub annotations: Vec<ClipAnnotations>,
    pub vocabulary: Vocabulary,
    pub stats: CorpusStats,
}

struct ClassTemplate {
    /// One entry for stationary classes, three (attack, decay, release) for
    /// transient ones.
    phases: Vec<Array1<f64>>,
}

fn bump(center: f64, width: f64, amplitude: f64) -> Array1<f64> {
    Array1::from_shape_fn(SYNTH_DIMS, |d| {
        let z = (d as f64 - center) / width;
        amplitude * (-0.5 * z * z).exp()
    })
}

/// Template shapes are drawn from a reserved stream of the corpus seed, not
/// from clip substreams, so a class sounds the same in every clip.
///
/// Transient classes are centered on a stationary class's band (round-robin)
/// whenever one exists. Band energy alone then cannot separate a short event
/// from the long sound it sits on; detection needs the temporal envelope.
fn class_templates(spec: &SynthSpec) -> Vec<ClassTemplate> {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(TEMPLATE_STREAM);
    struct Draw {
        center: f64,
        width: f64,
        shift: f64,
        offset: f64,
    }
    let draws: Vec<Draw> = spec
        .classes
        .iter()
        .map(|class| {
            let center = rng.gen_range(6.0..58.0);
            let width = rng.gen_range(2.0..6.0);
            let (shift, offset) = match class.kind {
                TemplateKind::Stationary => (0.0, 0.0),
                TemplateKind::Transient => {
                    (rng.gen_range(4.0..10.0), rng.gen_range(-2.0..2.0))
                }
            };
            Draw { center, width, shift, offset }
        })
        .collect();
    let stationary_centers: Vec<f64> = spec
        .classes
        .iter()
        .zip(&draws)
        .filter(|(class, _)| class.kind == TemplateKind::Stationary)
        .map(|(_, draw)| draw.center)
        .collect();
    let mut transient_ordinal = 0usize;
    spec.classes
        .iter()
        .zip(&draws)
        .map(|(class, draw)| {
            let phases = match class.kind {
                TemplateKind::Stationary => {
                    vec![bump(draw.center, draw.width, class.amplitude)]
                }
                TemplateKind::Transient => {
                    let center = if stationary_centers.is_empty() {
                        draw.center
                    } else {
                        stationary_centers[transient_ordinal % stationary_centers.len()]
                            + draw.offset
                    };
                    transient_ordinal += 1;
                    vec![
                        bump(center + draw.shift, draw.width * 0.8, class.amplitude * 1.3),
                        bump(center, draw.width, class.amplitude),
                        bump(center - draw.shift, draw.width * 1.4, class.amplitude * 0.55),
                    ]
                }
            };
            ClassTemplate { phases }
        })
        .collect()
}

/// Poisson-many `[onset, offset)` spans with log-normal durations, clamped to
/// the clip and merged where they overlap or touch.
fn sample_spans(
    class: &ClassSpec,
    clip_length: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(f64, f64)>> {
    let count = if class.rate > 0.0 {
        Poisson::new(class.rate)
            .map_err(|e| Error::InvalidParameter(format!("rate for `{}`: {e}", class.name)))?
            .sample(rng) as usize
    } else {
        0
    };
    if count == 0 {
        return Ok(Vec::new());
    }
    let duration = LogNormal::new(class.duration_median.ln(), class.duration_sigma)
        .map_err(|e| Error::InvalidParameter(format!("duration for `{}`: {e}", class.name)))?;
    let mut spans = Vec::with_capacity(count);
    for _ in 0..count {
        let d = duration.sample(rng).min(clip_length);
        let slack = clip_length - d;
        let onset = if slack > 0.0 {
            rng.gen_range(0.0..slack)
        } else {
            0.0
        };
        spans.push((onset, (onset + d).min(clip_length)));
    }
    spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (on, off) in spans {
        match merged.last_mut() {
            Some(last) if on <= last.1 => last.1 = last.1.max(off),
            _ => merged.push((on, off)),
        }
    }
    Ok(merged)
}

/// Adds the class template plus jitter over the span's frames. The span uses
/// the same frame-start containment rule as the roll encoder, so painted
/// frames and active frames coincide exactly.
fn paint_event(
    values: &mut Array2<f64>,
    template: &ClassTemplate,
    noise_scale: f64,
    span: (f64, f64),
    hop: f64,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let n_frames = values.nrows();
    let (first, end) = eventroll::frame_span(span.0, span.1, hop);
    let end = end.min(n_frames);
    if first >= end {
        return Ok(());
    }
    let jitter = Normal::new(0.0, noise_scale)
        .map_err(|e| Error::InvalidParameter(format!("noise scale: {e}")))?;
    let len = end - first;
    for i in 0..len {
        let phase = if template.phases.len() == 1 {
            &template.phases[0]
        } else {
            let frac = (i as f64 + 0.5) / len as f64;
            if frac < ATTACK_FRAC {
                &template.phases[0]
            } else if frac < ATTACK_FRAC + DECAY_FRAC {
                &template.phases[1]
            } else {
                &template.phases[2]
            }
        };
        for d in 0..SYNTH_DIMS {
            values[(first + i, d)] += phase[d] + jitter.sample(rng);
        }
    }
    Ok(())
}

/// Generates one clip. Deterministic in `(spec.seed, clip_index)`; the roll
/// is produced by encoding the returned annotations, so the two can never
/// disagree.
pub fn generate_clip(
    spec: &SynthSpec,
    clip_index: usize,
) -> Result<(FeatureMatrix, EventRoll, ClipAnnotations)> {
    spec.validate()?;
    let n_frames = spec.n_frames();
    let templates = class_templates(spec);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(clip_index as u64);

    let background = Normal::new(spec.background_level, spec.background_noise)
        .map_err(|e| Error::InvalidParameter(format!("background noise: {e}")))?;
    let mut values =
        Array2::from_shape_simple_fn((n_frames, SYNTH_DIMS), || background.sample(&mut rng));

    let mut events: Vec<EventAnnotation> = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        for span in sample_spans(class, spec.clip_length, &mut rng)? {
            paint_event(
                &mut values,
                &templates[ci],
                class.noise_scale,
                span,
                spec.frame.hop,
                &mut rng,
            )?;
            events.push(EventAnnotation::new(span.0, span.1, class.name.clone())?);
        }
    }
    events.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then(a.offset.partial_cmp(&b.offset).unwrap())
            .then_with(|| a.label.cmp(&b.label))
    });
    let annotations = ClipAnnotations {
        clip_id: format!("clip{clip_index:05}"),
        duration: spec.clip_length,
        events,
    };
    let roll = eventroll::encode_roll(&annotations, &spec.vocabulary(), &spec.frame, n_frames)?;
    Ok((FeatureMatrix::new(values)?, roll, annotations))
}

/// Generates `spec.n_clips` clips on independent substreams and computes the
/// corpus duration statistics.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    if spec.n_clips == 0 {
        return Err(Error::InvalidParameter("n_clips must be at least 1".into()));
    }
    let mut clips = Vec::with_capacity(spec.n_clips);
    let mut annotations = Vec::with_capacity(spec.n_clips);
    for index in 0..spec.n_clips {
        let (features, roll, clip) = generate_clip(spec, index)?;
        clips.push((features, roll));
        annotations.push(clip);
    }
    let vocabulary = spec.vocabulary();
    let stats = eventroll::duration_stats(&annotations, &vocabulary, &spec.frame);
    Ok(SynthCorpus {
        clips,
        annotations,
        vocabulary,
        stats,
    })
}

/// Heavily imbalanced six-class recipe: two long stationary hums dominate the
/// active frames, four short transient blips are rare. The per-class active
/// frame ratio between the largest and smallest class exceeds 10.
pub fn default_imbalanced(n_clips: usize, seed: u64) -> SynthSpec {
    let stationary = |name: &str, rate: f64, amplitude: f64| ClassSpec {
        name: name.into(),
        duration_median: 8.0,
        duration_sigma: 0.25,
        kind: TemplateKind::Stationary,
        rate,
        amplitude,
        noise_scale: 0.15,
    };
    let transient = |name: &str, rate: f64, amplitude: f64| ClassSpec {
        name: name.into(),
        duration_median: 0.3,
        duration_sigma: 0.4,
        kind: TemplateKind::Transient,
        rate,
        amplitude,
        noise_scale: 0.35,
    };
    SynthSpec {
        classes: vec![
            stationary("hum_low", 0.8, 3.0),
            stationary("hum_high", 0.6, 2.6),
            transient("blip_a", 0.9, 2.4),
            transient("blip_b", 0.8, 2.2),
            transient("blip_c", 0.7, 2.1),
            transient("blip_d", 0.6, 2.0),
        ],
        clip_length: 10.0,
        n_clips,
        background_level: -3.0,
        background_noise: 0.3,
        frame: FrameParams::default(),
        seed,
    }
}

fn require_f64(map: &KvMap, key: &str) -> Result<f64> {
    map.require(key)?.parse().map_err(|_| Error::ConfigKey {
        key: key.to_string(),
        message: format!("expected a number, got `{}`", map.raw(key).unwrap_or("")),
    })
}

fn reject_unknown(map: &KvMap, known: &[&str], context: &str) -> Result<()> {
    if let Some(key) = map.unknown_keys(known).first() {
        return Err(Error::ConfigKey {
            key: key.clone(),
            message: format!("unknown key in {context}"),
        });
    }
    Ok(())
}

const GLOBAL_KEYS: &[&str] = &[
    "clip_length",
    "n_clips",
    "seed",
    "background_level",
    "background_noise",
    "window",
    "hop",
];
const CLASS_KEYS: &[&str] = &[
    "name",
    "kind",
    "median",
    "sigma",
    "rate",
    "amplitude",
    "noise",
];

/// Parses a corpus spec file: global `key = value` lines followed by one
/// `[class]` section per class.
pub fn parse_spec_file(text: &str) -> Result<SynthSpec> {
    let doc = KvFile::parse(text)?;
    reject_unknown(&doc.global, GLOBAL_KEYS, "synth spec")?;
    let defaults = FrameParams::default();
    let mut spec = SynthSpec {
        classes: Vec::new(),
        clip_length: doc.global.f64_or("clip_length", 10.0)?,
        n_clips: doc.global.usize_or("n_clips", 20)?,
        background_level: doc.global.f64_or("background_level", -3.0)?,
        background_noise: doc.global.f64_or("background_noise", 0.3)?,
        frame: FrameParams {
            window: doc.global.f64_or("window", defaults.window)?,
            hop: doc.global.f64_or("hop", defaults.hop)?,
        },
        seed: doc.global.u64_or("seed", 7)?,
    };
    for (section, map) in &doc.sections {
        if section != "class" {
            return Err(Error::ConfigKey {
                key: format!("[{section}]"),
                message: "unknown section, expected [class]".into(),
            });
        }
        reject_unknown(map, CLASS_KEYS, "class section")?;
        let kind = match map.require("kind")? {
            "stationary" => TemplateKind::Stationary,
            "transient" => TemplateKind::Transient,
            other => {
                return Err(Error::ConfigKey {
                    key: "kind".into(),
                    message: format!("expected stationary or transient, got `{other}`"),
                })
            }
        };
        spec.classes.push(ClassSpec {
            name: map.require("name")?.to_string(),
            duration_median: require_f64(map, "median")?,
            duration_sigma: map.f64_or("sigma", 0.3)?,
            kind,
            rate: map.f64_or("rate", 1.0)?,
            amplitude: map.f64_or("amplitude", 2.5)?,
            noise_scale: map.f64_or("noise", 0.2)?,
        });
    }
    spec.validate()?;
    Ok(spec)
}

/// Inverse of [`parse_spec_file`]; round-trips exactly because float values
/// are printed in shortest round-trip form.
pub fn render_spec_file(spec: &SynthSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("clip_length = {}\n", spec.clip_length));
    out.push_str(&format!("n_clips = {}\n", spec.n_clips));
    out.push_str(&format!("seed = {}\n", spec.seed));
    out.push_str(&format!("background_level = {}\n", spec.background_level));
    out.push_str(&format!("background_noise = {}\n", spec.background_noise));
    out.push_str(&format!("window = {}\n", spec.frame.window));
    out.push_str(&format!("hop = {}\n", spec.frame.hop));
    for class in &spec.classes {
        out.push_str("\n[class]\n");
        out.push_str(&format!("name = {}\n", class.name));
        let kind = match class.kind {
            TemplateKind::Stationary => "stationary",
            TemplateKind::Transient => "transient",
        };
        out.push_str(&format!("kind = {kind}\n"));
        out.push_str(&format!("median = {}\n", class.duration_median));
        out.push_str(&format!("sigma = {}\n", class.duration_sigma));
        out.push_str(&format!("rate = {}\n", class.rate));
        out.push_str(&format!("amplitude = {}\n", class.amplitude));
        out.push_str(&format!("noise = {}\n", class.noise_scale));
    }
    out
}
