//! Detection thresholding, event decoding, and segment-based evaluation.
//!
//! Evaluation pools frame activity into fixed-length segments (1 s by
//! default) and scores per-class F and error rate over segments, plus
//! macro-F (unweighted class mean, zero-scoring classes included), micro-F
//! (counts pooled across classes first), and an overall error rate built
//! from per-segment substitutions, deletions, and insertions.

use ndarray::Array2;

use crate::error::Error;
use crate::eventroll::{EventAnnotation, EventRoll, FrameParams, Vocabulary};
use crate::Result;

/// Guards against products like `n * hop` landing a few ulps past a segment
/// boundary they should sit exactly on.
const BOUNDARY_EPS: f64 = 1e-9;

/// Length of an evaluation segment in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub segment_length: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { segment_length: 1.0 }
    }
}

impl SegmentParams {
    pub fn new(segment_length: f64) -> Result<Self> {
        if !(segment_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "segment length must be positive, got {segment_length}"
            )));
        }
        Ok(SegmentParams { segment_length })
    }
}

/// Aggregated segment-level counts. Per-segment substitution splitting has
/// already happened, so merging two counts is plain addition; a corpus is a
/// fold of per-clip counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCounts {
    pub true_positives: Vec<u64>,
    pub false_positives: Vec<u64>,
    pub false_negatives: Vec<u64>,
    /// Reference-active segment count per class (R_m).
    pub ref_active: Vec<u64>,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    /// Total reference-active (segment, class) pairs, the overall-ER denominator.
    pub ref_total: u64,
}

impl SegmentCounts {
    pub fn zeros(n_classes: usize) -> Self {
        SegmentCounts {
            true_positives: vec![0; n_classes],
            false_positives: vec![0; n_classes],
            false_negatives: vec![0; n_classes],
            ref_active: vec![0; n_classes],
            substitutions: 0,
            deletions: 0,
            insertions: 0,
            ref_total: 0,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.true_positives.len()
    }

    /// Counts from aligned reference and prediction segment grids (K x M).
    pub fn from_segments(reference: &Array2<u8>, predicted: &Array2<u8>) -> Result<Self> {
        if reference.dim() != predicted.dim() {
            return Err(Error::shape(
                "segment grids",
                format!("{:?}", reference.dim()),
                format!("{:?}", predicted.dim()),
            ));
        }
        let (k_segs, m) = reference.dim();
        let mut counts = SegmentCounts::zeros(m);
        for k in 0..k_segs {
            let mut fn_seg = 0u64;
            let mut fp_seg = 0u64;
            for class in 0..m {
                let r = reference[[k, class]] != 0;
                let p = predicted[[k, class]] != 0;
                if r {
                    counts.ref_active[class] += 1;
                    counts.ref_total += 1;
                }
                match (r, p) {
                    (true, true) => counts.true_positives[class] += 1,
                    (true, false) => {
                        counts.false_negatives[class] += 1;
                        fn_seg += 1;
                    }
                    (false, true) => {
                        counts.false_positives[class] += 1;
                        fp_seg += 1;
                    }
                    (false, false) => {}
                }
            }
            let s = fn_seg.min(fp_seg);
            counts.substitutions += s;
            counts.deletions += fn_seg - s;
            counts.insertions += fp_seg - s;
        }
        Ok(counts)
    }

    pub fn merge(&mut self, other: &SegmentCounts) -> Result<()> {
        if self.n_classes() != other.n_classes() {
            return Err(Error::shape(
                "segment counts merge",
                self.n_classes().to_string(),
                other.n_classes().to_string(),
            ));
        }
        for class in 0..self.n_classes() {
            self.true_positives[class] += other.true_positives[class];
            self.false_positives[class] += other.false_positives[class];
            self.false_negatives[class] += other.false_negatives[class];
            self.ref_active[class] += other.ref_active[class];
        }
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_total += other.ref_total;
        Ok(())
    }

    /// Final scores from the accumulated counts.
    pub fn report(&self) -> EvalReport {
        let m = self.n_classes();
        let mut class_f = Vec::with_capacity(m);
        let mut class_er = Vec::with_capacity(m);
        let mut class_er_defined = Vec::with_capacity(m);
        let mut tp_sum = 0u64;
        let mut fp_sum = 0u64;
        let mut fn_sum = 0u64;
        for class in 0..m {
            let tp = self.true_positives[class];
            let fp = self.false_positives[class];
            let fnn = self.false_negatives[class];
            tp_sum += tp;
            fp_sum += fp;
            fn_sum += fnn;
            let denom = 2 * tp + fp + fnn;
            class_f.push(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 });
            let r = self.ref_active[class];
            if r > 0 {
                class_er.push((fnn + fp) as f64 / r as f64);
                class_er_defined.push(true);
            } else {
                // No reference segments: the rate has no denominator. Report
                // 0 when nothing was inserted, infinity otherwise, flagged.
                class_er.push(if fp == 0 { 0.0 } else { f64::INFINITY });
                class_er_defined.push(false);
            }
        }
        let macro_f = if m == 0 { 0.0 } else { class_f.iter().sum::<f64>() / m as f64 };
        let micro_denom = 2 * tp_sum + fp_sum + fn_sum;
        let micro_f =
            if micro_denom == 0 { 0.0 } else { 2.0 * tp_sum as f64 / micro_denom as f64 };
        let edits = self.substitutions + self.deletions + self.insertions;
        let overall_er = if self.ref_total > 0 {
            edits as f64 / self.ref_total as f64
        } else if edits == 0 {
            0.0
        } else {
            f64::INFINITY
        };
        EvalReport {
            class_f,
            class_er,
            class_er_defined,
            macro_f,
            micro_f,
            overall_er,
            counts: self.clone(),
        }
    }
}

/// Per-class and aggregate segment-based scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_f: Vec<f64>,
    pub class_er: Vec<f64>,
    /// False where a class has no reference segments and its error rate is
    /// reported as a placeholder rather than a true rate.
    pub class_er_defined: Vec<bool>,
    pub macro_f: f64,
    pub micro_f: f64,
    pub overall_er: f64,
    pub counts: SegmentCounts,
}

impl EvalReport {
    pub fn n_classes(&self) -> usize {
        self.class_f.len()
    }

    /// Human-readable TSV: one `class<TAB>F<TAB>ER` row per class, then a
    /// footer block with the aggregates.
    pub fn render_tsv(&self, vocab: &Vocabulary) -> Result<String> {
        self.check_vocab(vocab)?;
        let mut out = String::from("class\tF\tER\n");
        for (i, label) in vocab.classes().iter().enumerate() {
            out.push_str(&format!(
                "{label}\t{:.6}\t{:.6}\n",
                self.class_f[i], self.class_er[i]
            ));
        }
        out.push_str(&format!("macro_F\t{:.6}\n", self.macro_f));
        out.push_str(&format!("micro_F\t{:.6}\n", self.micro_f));
        out.push_str(&format!("overall_ER\t{:.6}\n", self.overall_er));
        Ok(out)
    }

    /// Machine-readable flat key=value rendering.
    pub fn render_kv(&self, vocab: &Vocabulary) -> Result<String> {
        self.check_vocab(vocab)?;
        let mut out = String::new();
        for (i, label) in vocab.classes().iter().enumerate() {
            out.push_str(&format!("class.{label}.f={:.6}\n", self.class_f[i]));
            out.push_str(&format!("class.{label}.er={:.6}\n", self.class_er[i]));
            out.push_str(&format!("class.{label}.er_defined={}\n", self.class_er_defined[i]));
        }
        out.push_str(&format!("macro_f={:.6}\n", self.macro_f));
        out.push_str(&format!("micro_f={:.6}\n", self.micro_f));
        out.push_str(&format!("overall_er={:.6}\n", self.overall_er));
        Ok(out)
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.n_classes() {
            return Err(Error::shape(
                "report vs vocabulary",
                self.n_classes().to_string(),
                vocab.len().to_string(),
            ));
        }
        Ok(())
    }
}

/// Binarize probabilities at `phi`, inclusive: an entry exactly at the
/// threshold counts as active.
pub fn threshold(probabilities: &Array2<f64>, phi: f64) -> Result<EventRoll> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "detection threshold must lie in (0,1), got {phi}"
        )));
    }
    let (n, m) = probabilities.dim();
    let mut roll = EventRoll::zeros(n, m);
    for frame in 0..n {
        for class in 0..m {
            if probabilities[[frame, class]] >= phi {
                roll.set_active(frame, class);
            }
        }
    }
    Ok(roll)
}

/// Decode maximal runs of active frames back into labelled events with
/// onset `first * hop` and offset `(last + 1) * hop`. Events come out
/// sorted by onset, then offset, then label.
pub fn roll_to_events(
    roll: &EventRoll,
    fp: &FrameParams,
    vocab: &Vocabulary,
) -> Result<Vec<EventAnnotation>> {
    if vocab.len() != roll.n_classes() {
        return Err(Error::shape(
            "roll vs vocabulary",
            roll.n_classes().to_string(),
            vocab.len().to_string(),
        ));
    }
    let hop = fp.hop;
    let mut events = Vec::new();
    for class in 0..roll.n_classes() {
        let label = &vocab.classes()[class];
        let mut run_start: Option<usize> = None;
        for frame in 0..=roll.n_frames() {
            let active = frame < roll.n_frames() && roll.is_active(frame, class);
            match (run_start, active) {
                (None, true) => run_start = Some(frame),
                (Some(first), false) => {
                    events.push(EventAnnotation::new(
                        first as f64 * hop,
                        frame as f64 * hop,
                        label.clone(),
                    )?);
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    events.sort_by(|a, b| {
        (a.onset, a.offset, &a.label)
            .partial_cmp(&(b.onset, b.offset, &b.label))
            .expect("event times are finite")
    });
    Ok(events)
}

/// Pool frame activity into segments of `sp.segment_length` seconds. A
/// segment is active for a class iff any frame starting inside it is.
pub fn segmentize(roll: &EventRoll, fp: &FrameParams, sp: SegmentParams) -> Array2<u8> {
    let n = roll.n_frames();
    let m = roll.n_classes();
    let seg = sp.segment_length;
    let total = n as f64 * fp.hop;
    let k_segs = ((total / seg) - BOUNDARY_EPS).ceil().max(0.0) as usize;
    let mut grid = Array2::zeros((k_segs, m));
    for frame in 0..n {
        let start = frame as f64 * fp.hop;
        let k = (((start + BOUNDARY_EPS) / seg).floor() as usize).min(k_segs.saturating_sub(1));
        for class in 0..m {
            if roll.is_active(frame, class) {
                grid[[k, class]] = 1;
            }
        }
    }
    grid
}

/// Segment counts for one reference/prediction pair.
pub fn segment_counts(
    reference: &EventRoll,
    predicted: &EventRoll,
    fp: &FrameParams,
    sp: SegmentParams,
) -> Result<SegmentCounts> {
    if reference.n_frames() != predicted.n_frames()
        || reference.n_classes() != predicted.n_classes()
    {
        return Err(Error::shape(
            "reference vs predicted roll",
            format!("{}x{}", reference.n_frames(), reference.n_classes()),
            format!("{}x{}", predicted.n_frames(), predicted.n_classes()),
        ));
    }
    SegmentCounts::from_segments(&segmentize(reference, fp, sp), &segmentize(predicted, fp, sp))
}

/// Segment-based evaluation of one prediction against its reference.
pub fn evaluate(
    reference: &EventRoll,
    predicted: &EventRoll,
    fp: &FrameParams,
    sp: SegmentParams,
) -> Result<EvalReport> {
    Ok(segment_counts(reference, predicted, fp, sp)?.report())
}
