use thiserror::Error;

/// Error type shared by all toolkit modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed annotation text (wrong column count, bad numbers, inverted spans).
    #[error("annotation parse error at line {line}: {message}")]
    AnnotationParse { line: usize, message: String },

    /// An event label that is not part of the vocabulary.
    #[error("label {label:?} is not in the vocabulary")]
    UnknownLabel { label: String },

    /// Dimension mismatch between two tensors/matrices.
    #[error("shape mismatch: {context} (expected {expected}, got {actual})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// Invalid parameter value (out of range, inconsistent configuration).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Mel filterbank construction failed (an empty filter under the given resolution).
    #[error("mel filter {index} is empty: {n_mels} bands exceed the FFT resolution")]
    EmptyMelFilter { index: usize, n_mels: usize },

    /// Normalization fit over zero frames.
    #[error("cannot fit normalization statistics: no frames")]
    EmptyNormFit,

    /// Binary file with a wrong magic/version or truncated contents.
    #[error("bad {what} file: {message}")]
    BadFile { what: &'static str, message: String },

    /// Unsupported or malformed WAV input.
    #[error("wav decode error: {0}")]
    Wav(String),

    /// Training aborted because the loss became non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {value}")]
    Diverged { epoch: usize, batch: usize, value: f64 },

    /// Key = value configuration file problem.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// Missing or contradictory configuration key.
    #[error("config key {key:?}: {message}")]
    ConfigKey { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
