//! Event annotations, class vocabulary, and frame-level event rolls.
//!
//! Annotations arrive as tab-separated text (either `onset\toffset\tlabel` or
//! the five-column `filename\tscene\tonset\toffset\tlabel` metadata layout).
//! They are encoded into binary frames-by-classes activity matrices using a
//! frame-start containment rule: frame `n` is active for an event iff
//! `onset <= n * hop < offset`. The same rule backs the per-class duration
//! and frame-count statistics, so roll column sums and corpus stats agree by
//! construction.

use ndarray::Array2;

use crate::error::Error;
use crate::Result;

/// One annotated sound event instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventAnnotation {
    /// Start time in seconds, non-negative.
    pub onset: f64,
    /// End time in seconds, strictly greater than `onset`.
    pub offset: f64,
    /// Event class name, non-empty.
    pub label: String,
}

impl EventAnnotation {
    pub fn new(onset: f64, offset: f64, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if !(onset >= 0.0) {
            return Err(Error::InvalidParameter(format!("event onset {onset} is negative")));
        }
        if !(offset > onset) {
            return Err(Error::InvalidParameter(format!(
                "event offset {offset} must be greater than onset {onset}"
            )));
        }
        if label.is_empty() {
            return Err(Error::InvalidParameter("event label is empty".into()));
        }
        Ok(EventAnnotation { onset, offset, label })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// All events of one sound clip, plus the clip length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipAnnotations {
    pub clip_id: String,
    /// Clip length in seconds. Events are clamped so `offset <= duration + 1e-6`.
    pub duration: f64,
    pub events: Vec<EventAnnotation>,
}

impl ClipAnnotations {
    pub fn with_clip_id(mut self, clip_id: impl Into<String>) -> Self {
        self.clip_id = clip_id.into();
        self
    }
}

/// Ordered, deduplicated class-name list. Index positions are stable because
/// the list is always lexicographically sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    classes: Vec<String>,
}

impl Vocabulary {
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let mut classes: Vec<String> = labels.into_iter().collect();
        classes.sort();
        classes.dedup();
        Vocabulary { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }
}

/// Framing grid: analysis window and hop, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    pub window: f64,
    pub hop: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams { window: 0.040, hop: 0.020 }
    }
}

impl FrameParams {
    pub fn new(window: f64, hop: f64) -> Result<Self> {
        if !(hop > 0.0 && hop <= window) {
            return Err(Error::InvalidParameter(format!(
                "frame params need 0 < hop <= window, got window {window}, hop {hop}"
            )));
        }
        Ok(FrameParams { window, hop })
    }
}

/// Binary frames-by-classes activity matrix (multi-hot per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRoll {
    activity: Array2<u8>,
}

impl EventRoll {
    pub fn zeros(n_frames: usize, n_classes: usize) -> Self {
        EventRoll { activity: Array2::zeros((n_frames, n_classes)) }
    }

    /// Wrap an existing matrix; every entry must be 0 or 1.
    pub fn from_activity(activity: Array2<u8>) -> Result<Self> {
        if activity.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("event roll entries must be 0 or 1".into()));
        }
        Ok(EventRoll { activity })
    }

    pub fn n_frames(&self) -> usize {
        self.activity.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.activity.ncols()
    }

    pub fn is_active(&self, frame: usize, class: usize) -> bool {
        self.activity[[frame, class]] != 0
    }

    pub fn set_active(&mut self, frame: usize, class: usize) {
        self.activity[[frame, class]] = 1;
    }

    pub fn activity(&self) -> &Array2<u8> {
        &self.activity
    }

    /// Number of active frames of one class in this roll (the
    /// inverse-frequency loss N_m).
    pub fn class_frame_count(&self, class: usize) -> usize {
        self.activity.column(class).iter().filter(|&&v| v != 0).count()
    }
}

/// Corpus-level per-class duration and frame statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub classes: Vec<String>,
    /// Arithmetic mean of per-instance `offset - onset`, seconds. Zero for
    /// classes without instances.
    pub mean_duration: Vec<f64>,
    pub instances: Vec<usize>,
    /// Total active frame count under the frame-start containment rule,
    /// summed per instance.
    pub frames: Vec<usize>,
}

impl CorpusStats {
    /// TSV rendering with the `class\tmean_duration_s\tinstances\tframes` header.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("class\tmean_duration_s\tinstances\tframes\n");
        for i in 0..self.classes.len() {
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\n",
                self.classes[i], self.mean_duration[i], self.instances[i], self.frames[i]
            ));
        }
        out
    }
}

/// Active frame index range `[first, end)` of a `[onset, offset)` span on the
/// hop grid: frame `n` is inside iff `onset <= n * hop < offset`.
///
/// The float seed guesses are corrected by scanning, so the result satisfies
/// the containment comparisons exactly as written.
pub(crate) fn frame_span(onset: f64, offset: f64, hop: f64) -> (usize, usize) {
    if !(offset > onset) || offset <= 0.0 {
        return (0, 0);
    }
    let mut first = (onset / hop).floor().max(0.0) as usize;
    while first > 0 && ((first - 1) as f64) * hop >= onset {
        first -= 1;
    }
    while (first as f64) * hop < onset {
        first += 1;
    }
    let mut end = ((offset / hop).ceil().max(0.0) as usize).max(first) + 1;
    while end > first && ((end - 1) as f64) * hop >= offset {
        end -= 1;
    }
    while (end as f64) * hop < offset {
        end += 1;
    }
    (first, end)
}

/// Parse tab-separated annotation text into clip annotations.
///
/// Accepts three columns (`onset offset label`) or five columns
/// (`filename scene onset offset label`), sniffed from the first non-empty
/// line; the column count must be uniform. Events reaching past
/// `clip_duration` are clamped to it (with a warning); events starting at or
/// beyond the clip end are dropped.
pub fn parse_annotations(text: &str, clip_duration: f64) -> Result<ClipAnnotations> {
    if !(clip_duration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "clip duration must be positive, got {clip_duration}"
        )));
    }
    let mut events = Vec::new();
    let mut expected_cols: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let ncols = cols.len();
        match expected_cols {
            None => {
                if ncols != 3 && ncols != 5 {
                    return Err(Error::AnnotationParse {
                        line: line_no,
                        message: format!("expected 3 or 5 tab-separated columns, got {ncols}"),
                    });
                }
                expected_cols = Some(ncols);
            }
            Some(want) if want != ncols => {
                return Err(Error::AnnotationParse {
                    line: line_no,
                    message: format!("expected {want} columns (as on the first line), got {ncols}"),
                });
            }
            _ => {}
        }
        let (onset_s, offset_s, label) = if ncols == 3 {
            (cols[0], cols[1], cols[2])
        } else {
            (cols[2], cols[3], cols[4])
        };
        let onset: f64 = onset_s.trim().parse().map_err(|_| Error::AnnotationParse {
            line: line_no,
            message: format!("onset {onset_s:?} is not a number"),
        })?;
        let offset: f64 = offset_s.trim().parse().map_err(|_| Error::AnnotationParse {
            line: line_no,
            message: format!("offset {offset_s:?} is not a number"),
        })?;
        if onset < 0.0 {
            return Err(Error::AnnotationParse {
                line: line_no,
                message: format!("onset {onset} is negative"),
            });
        }
        if offset <= onset {
            return Err(Error::AnnotationParse {
                line: line_no,
                message: format!("offset {offset} is not after onset {onset}"),
            });
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::AnnotationParse { line: line_no, message: "empty label".into() });
        }

        if onset >= clip_duration {
            log::warn!(
                "line {line_no}: event [{onset}, {offset}) {label:?} starts past the clip end ({clip_duration} s), dropped"
            );
            continue;
        }
        let mut offset = offset;
        if offset > clip_duration + 1e-6 {
            log::warn!(
                "line {line_no}: event offset {offset} exceeds clip duration {clip_duration} s, clamped"
            );
            offset = clip_duration;
        }
        events.push(EventAnnotation { onset, offset, label: label.to_string() });
    }

    Ok(ClipAnnotations { clip_id: String::new(), duration: clip_duration, events })
}

/// Sorted unique labels across all clips.
pub fn build_vocabulary(annotations: &[ClipAnnotations]) -> Vocabulary {
    Vocabulary::from_labels(
        annotations
            .iter()
            .flat_map(|c| c.events.iter().map(|e| e.label.clone())),
    )
}

/// Encode clip annotations as an `n_frames` x `vocab.len()` multi-hot roll.
///
/// `n_frames` comes from the feature extractor for the same clip, which keeps
/// labels and features aligned.
pub fn encode_roll(
    clip: &ClipAnnotations,
    vocab: &Vocabulary,
    fp: &FrameParams,
    n_frames: usize,
) -> Result<EventRoll> {
    let mut roll = EventRoll::zeros(n_frames, vocab.len());
    for event in &clip.events {
        let class = vocab
            .index_of(&event.label)
            .ok_or_else(|| Error::UnknownLabel { label: event.label.clone() })?;
        let offset = event.offset.min(clip.duration.max(event.onset));
        let (first, end) = frame_span(event.onset, offset, fp.hop);
        for frame in first..end.min(n_frames) {
            roll.set_active(frame, class);
        }
    }
    Ok(roll)
}

/// Per-class mean event duration, instance count, and total active frames.
pub fn duration_stats(
    annotations: &[ClipAnnotations],
    vocab: &Vocabulary,
    fp: &FrameParams,
) -> CorpusStats {
    let m = vocab.len();
    let mut duration_sum = vec![0.0f64; m];
    let mut instances = vec![0usize; m];
    let mut frames = vec![0usize; m];

    for clip in annotations {
        for event in &clip.events {
            let Some(class) = vocab.index_of(&event.label) else {
                continue;
            };
            duration_sum[class] += event.duration();
            instances[class] += 1;
            let offset = event.offset.min(clip.duration.max(event.onset));
            let (first, end) = frame_span(event.onset, offset, fp.hop);
            frames[class] += end - first;
        }
    }

    let mean_duration = duration_sum
        .iter()
        .zip(&instances)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();

    CorpusStats { classes: vocab.classes().to_vec(), mean_duration, instances, frames }
}
