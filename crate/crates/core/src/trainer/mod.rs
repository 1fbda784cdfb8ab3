//! Mini-batch training with Adam, model evaluation, and the gamma sweep.
//!
//! The loop is fully deterministic: parameter init, per-epoch shuffling, and
//! gradient accumulation order are all fixed by the config seed. Per-clip
//! gradients within a batch are summed in batch order and normalized by the
//! total frame count of the batch; the loss reported in the history stays an
//! unnormalized sum so it is comparable across batch sizes.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::Error;
use crate::eventroll::{EventRoll, FrameParams};
use crate::features::FeatureMatrix;
use crate::kvfile::KvFile;
use crate::losses::{self, FocusingWeight, InverseFreqConfig, LossResult};
use crate::metrics::{self, EvalReport, SegmentCounts, SegmentParams};
use crate::model::{backward, forward, init_params, CrnnConfig, CrnnGradients, CrnnParameters};
use crate::Result;

/// Training dataset: one `(features, reference roll)` pair per clip, with
/// equal frame counts inside each pair.
pub type Dataset = [(FeatureMatrix, EventRoll)];

/// RNG stream for epoch shuffles, distinct from the stream used by parameter
/// init so the two never interact.
const SHUFFLE_STREAM: u64 = 1;

/// Per-gamma seed spacing for sweep runs; index 0 keeps the base seed.
const SWEEP_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Default sweep grid.
pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    InverseFreq,
    DurationRobust,
}

impl LossKind {
    pub fn parse(text: &str) -> Result<LossKind> {
        match text {
            "bce" => Ok(LossKind::Bce),
            "inverse_freq" => Ok(LossKind::InverseFreq),
            "duration_robust" => Ok(LossKind::DurationRobust),
            other => Err(Error::ConfigKey {
                key: "loss".into(),
                message: format!(
                    "expected bce, inverse_freq, or duration_robust, got `{other}`"
                ),
            }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::InverseFreq => "inverse_freq",
            LossKind::DurationRobust => "duration_robust",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Focusing factor, used by `duration_robust` only.
    pub gamma: f64,
    /// Inverse-frequency constant, used by `inverse_freq` only.
    pub c: f64,
    pub epochs: usize,
    pub clips_per_batch: usize,
    /// Adam step size. Zero is allowed and leaves parameters at their init.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Detection threshold for validation and downstream evaluation.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Bce,
            gamma: 1.0,
            c: 500.0,
            epochs: 30,
            clips_per_batch: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.clips_per_batch == 0 {
            return Err(Error::InvalidParameter(
                "epochs and clips_per_batch must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and non-negative, got {}",
                self.gamma
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0,1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Architecture knobs without the data-determined input/output widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub conv_channels: Vec<usize>,
    pub pool_freq: Vec<usize>,
    pub gru_units: usize,
    pub dense_units: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let cfg = CrnnConfig::new(1);
        ModelShape {
            conv_channels: cfg.conv_channels,
            pool_freq: cfg.pool_freq,
            gru_units: cfg.gru_units,
            dense_units: cfg.dense_units,
        }
    }
}

impl ModelShape {
    pub fn to_config(&self, n_mels: usize, n_classes: usize) -> CrnnConfig {
        CrnnConfig {
            n_mels,
            conv_channels: self.conv_channels.clone(),
            pool_freq: self.pool_freq.clone(),
            gru_units: self.gru_units,
            dense_units: self.dense_units,
            n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Summed training loss over the epoch, each batch valued at the
    /// parameters it was trained on.
    pub loss: f64,
    pub macro_f: Option<f64>,
    pub micro_f: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// TSV with the `epoch\tloss\tmacro_F\tmicro_F` header; `-` marks epochs
    /// without validation scores.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tmacro_F\tmicro_F\n");
        for rec in &self.epochs {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.6}"),
                None => "-".into(),
            };
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\n",
                rec.epoch,
                rec.loss,
                fmt(rec.macro_f),
                fmt(rec.micro_f)
            ));
        }
        out
    }
}

/// Held-out clips scored at the end of every epoch.
pub struct ValidationOptions<'a> {
    pub dataset: &'a Dataset,
    pub frame: FrameParams,
    pub segment: SegmentParams,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

fn clip_loss(cfg: &TrainConfig, logits: &Array2<f64>, roll: &EventRoll) -> Result<LossResult> {
    match cfg.loss_kind {
        LossKind::Bce => losses::bce_loss(logits, roll),
        LossKind::InverseFreq => {
            losses::inverse_freq_loss(logits, roll, InverseFreqConfig::new(cfg.c)?)
        }
        LossKind::DurationRobust => {
            losses::duration_robust_loss(logits, roll, FocusingWeight::new(cfg.gamma)?)
        }
    }
}

fn check_dataset(dataset: &Dataset) -> Result<(usize, usize)> {
    let Some((first_features, first_roll)) = dataset.first() else {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    };
    let n_mels = first_features.n_dims();
    let n_classes = first_roll.n_classes();
    for (i, (features, roll)) in dataset.iter().enumerate() {
        if features.n_dims() != n_mels {
            return Err(Error::shape(
                "dataset feature dims",
                n_mels,
                format!("{} in clip {i}", features.n_dims()),
            ));
        }
        if roll.n_classes() != n_classes {
            return Err(Error::shape(
                "dataset roll classes",
                n_classes,
                format!("{} in clip {i}", roll.n_classes()),
            ));
        }
        if roll.n_frames() != features.n_frames() {
            return Err(Error::shape(
                "dataset roll frames",
                features.n_frames(),
                format!("{} in clip {i}", roll.n_frames()),
            ));
        }
    }
    Ok((n_mels, n_classes))
}

/// Trains the default CRNN on the dataset.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(CrnnParameters, TrainHistory)> {
    train_model(dataset, &ModelShape::default(), None, cfg)
}

/// Trains a CRNN of the given shape, optionally scoring a validation set at
/// the end of every epoch. Bit-reproducible given (dataset, shape, cfg).
pub fn train_model(
    dataset: &Dataset,
    shape: &ModelShape,
    validation: Option<&ValidationOptions>,
    cfg: &TrainConfig,
) -> Result<(CrnnParameters, TrainHistory)> {
    cfg.validate()?;
    let (n_mels, n_classes) = check_dataset(dataset)?;
    let model_cfg = shape.to_config(n_mels, n_classes);
    let mut params = init_params(&model_cfg, cfg.seed)?;
    let mut adam = Adam::new(params.n_params(), cfg);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.clips_per_batch).enumerate() {
            let mut grad: Option<CrnnGradients> = None;
            let mut batch_frames = 0usize;
            for &clip in batch {
                let (features, roll) = &dataset[clip];
                let trace = forward(&params, features)?;
                let LossResult { value, d_logits } = clip_loss(cfg, trace.logits(), roll)?;
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_index,
                        value,
                    });
                }
                epoch_loss += value;
                batch_frames += features.n_frames();
                let clip_grad = backward(&params, &trace, &d_logits)?;
                match &mut grad {
                    None => grad = Some(clip_grad),
                    Some(acc) => acc.add_assign(&clip_grad)?,
                }
            }
            let mut grad = grad.expect("chunks are non-empty");
            grad.scale(1.0 / batch_frames as f64);
            adam.apply(params.data_mut(), grad.data());
        }
        let (macro_f, micro_f) = match validation {
            Some(v) => {
                let report =
                    evaluate_model(&params, v.dataset, &v.frame, v.segment, cfg.threshold)?;
                (Some(report.macro_f), Some(report.micro_f))
            }
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            macro_f,
            micro_f,
        });
    }
    Ok((params, history))
}

/// Scores a model on a dataset: forward, sigmoid, threshold, then segment
/// counts pooled over all clips.
pub fn evaluate_model(
    params: &CrnnParameters,
    dataset: &Dataset,
    fp: &FrameParams,
    sp: SegmentParams,
    threshold: f64,
) -> Result<EvalReport> {
    let mut counts = SegmentCounts::zeros(params.config().n_classes);
    for (features, roll) in dataset {
        let trace = forward(params, features)?;
        let probabilities = trace.logits().mapv(losses::sigmoid);
        let predicted = metrics::threshold(&probabilities, threshold)?;
        counts.merge(&metrics::segment_counts(roll, &predicted, fp, sp)?)?;
    }
    Ok(counts.report())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub macro_f: f64,
    pub micro_f: f64,
}

/// Renders sweep rows as TSV with a `gamma\tmacro_F\tmicro_F` header.
pub fn render_sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("gamma\tmacro_F\tmicro_F\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\n",
            row.gamma, row.macro_f, row.micro_f
        ));
    }
    out
}

/// One independent duration-robust training run per gamma, each from a fresh
/// init on a seed derived from the base seed; index 0 keeps the base seed so
/// a `{0}` sweep reproduces a plain BCE run exactly.
pub fn gamma_sweep(
    train_set: &Dataset,
    eval_set: &Dataset,
    gammas: &[f64],
    base_cfg: &TrainConfig,
    shape: &ModelShape,
    fp: &FrameParams,
    sp: SegmentParams,
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("gamma list is empty".into()));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for (i, &gamma) in gammas.iter().enumerate() {
        let mut cfg = base_cfg.clone();
        cfg.loss_kind = LossKind::DurationRobust;
        cfg.gamma = gamma;
        cfg.seed = base_cfg
            .seed
            .wrapping_add((i as u64).wrapping_mul(SWEEP_SEED_STRIDE));
        let (params, _) = train_model(train_set, shape, None, &cfg)?;
        let report = evaluate_model(&params, eval_set, fp, sp, cfg.threshold)?;
        rows.push(SweepRow {
            gamma,
            macro_f: report.macro_f,
            micro_f: report.micro_f,
        });
    }
    Ok(rows)
}

const CONFIG_KEYS: &[&str] = &[
    "loss",
    "gamma",
    "c",
    "epochs",
    "clips_per_batch",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
    "threshold",
    "conv_channels",
    "pool_freq",
    "gru_units",
    "dense_units",
];

/// Parses a flat `key = value` training config. Unknown keys are rejected.
pub fn parse_train_config(text: &str) -> Result<(TrainConfig, ModelShape)> {
    let doc = KvFile::parse(text)?;
    if let Some((section, _)) = doc.sections.first() {
        return Err(Error::ConfigKey {
            key: format!("[{section}]"),
            message: "train config has no sections".into(),
        });
    }
    if let Some(key) = doc.global.unknown_keys(CONFIG_KEYS).first() {
        return Err(Error::ConfigKey {
            key: key.clone(),
            message: "unknown key in train config".into(),
        });
    }
    let map = &doc.global;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        loss_kind: LossKind::parse(map.str_or("loss", defaults.loss_kind.as_str()))?,
        gamma: map.f64_or("gamma", defaults.gamma)?,
        c: map.f64_or("c", defaults.c)?,
        epochs: map.usize_or("epochs", defaults.epochs)?,
        clips_per_batch: map.usize_or("clips_per_batch", defaults.clips_per_batch)?,
        learning_rate: map.f64_or("learning_rate", defaults.learning_rate)?,
        beta1: map.f64_or("beta1", defaults.beta1)?,
        beta2: map.f64_or("beta2", defaults.beta2)?,
        epsilon: map.f64_or("epsilon", defaults.epsilon)?,
        seed: map.u64_or("seed", defaults.seed)?,
        threshold: map.f64_or("threshold", defaults.threshold)?,
    };
    cfg.validate()?;
    let default_shape = ModelShape::default();
    let shape = ModelShape {
        conv_channels: map.usize_list_or("conv_channels", &default_shape.conv_channels)?,
        pool_freq: map.usize_list_or("pool_freq", &default_shape.pool_freq)?,
        gru_units: map.usize_or("gru_units", default_shape.gru_units)?,
        dense_units: map.usize_or("dense_units", default_shape.dense_units)?,
    };
    Ok((cfg, shape))
}

/// Renders a config in the format accepted by [`parse_train_config`].
pub fn render_train_config(cfg: &TrainConfig, shape: &ModelShape) -> String {
    let list = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "loss = {}\ngamma = {}\nc = {}\nepochs = {}\nclips_per_batch = {}\n\
         learning_rate = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\nseed = {}\n\
         threshold = {}\nconv_channels = {}\npool_freq = {}\ngru_units = {}\ndense_units = {}\n",
        cfg.loss_kind.as_str(),
        cfg.gamma,
        cfg.c,
        cfg.epochs,
        cfg.clips_per_batch,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
        cfg.seed,
        cfg.threshold,
        list(&shape.conv_channels),
        list(&shape.pool_freq),
        shape.gru_units,
        shape.dense_units,
    )
}
