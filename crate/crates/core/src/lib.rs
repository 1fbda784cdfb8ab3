//! Sound event detection toolkit.
//!
//! Frame-level multi-label sound event detection at desk scale: event-roll
//! label encoding, log mel-band energy features, a small CRNN with exact
//! hand-written gradients, three training losses (plain binary cross-entropy,
//! inverse-frequency reweighted BCE, and a duration-robust focal-style loss),
//! segment-based evaluation metrics, and a synthetic imbalanced-corpus
//! generator for controlled experiments.
//!
//! Everything is computed in `f64` and is deterministic given its seeds.

pub mod error;
pub mod eventroll;
pub mod features;
pub mod kvfile;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synthgen;
pub mod trainer;

pub use error::Error;
pub use eventroll::{ClipAnnotations, CorpusStats, EventAnnotation, EventRoll, FrameParams, Vocabulary};
pub use features::{AudioBuffer, FeatureMatrix, MelParams, NormStats};
pub use losses::{FocusingWeight, InverseFreqConfig, LossResult};
pub use metrics::{EvalReport, SegmentCounts, SegmentParams};
pub use model::{CrnnConfig, CrnnGradients, CrnnParameters, ForwardTrace};
pub use synthgen::{ClassSpec, SynthSpec};
pub use trainer::{LossKind, TrainConfig, TrainHistory};

/// Toolkit version reported in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
