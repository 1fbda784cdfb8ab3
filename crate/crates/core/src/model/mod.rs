//! The CRNN: a 3-stage conv/pool front end over (time, mel) maps, a
//! bidirectional GRU over the resulting frame sequence, and a two-layer
//! dense head emitting one linear logit per frame and class. Sigmoid is
//! applied by the loss or at inference, never inside the network.
//!
//! Parameters live in one flat f64 buffer laid out tensor-by-tensor in a
//! fixed order (see [`CrnnParameters::layout`]); gradients share the same
//! layout, which keeps the optimizer, finite-difference checks, and the
//! checkpoint format trivial and bit-reproducible.

mod conv;
mod gru;

pub mod checkpoint;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::Error;
use crate::features::FeatureMatrix;
use crate::Result;

use conv::{ConvStage, ConvTrace};
use gru::{GruDirTrace, GRU_TENSORS};

/// Architecture hyperparameters. The conv kernel is fixed at 3x3 same-pad;
/// each pool stage divides the frequency axis only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrnnConfig {
    pub n_mels: usize,
    pub conv_channels: Vec<usize>,
    /// Frequency pool width per conv stage; time is never pooled.
    pub pool_freq: Vec<usize>,
    /// Hidden units per GRU direction.
    pub gru_units: usize,
    pub dense_units: usize,
    pub n_classes: usize,
}

impl CrnnConfig {
    /// The default stack: 3 conv layers of 128 channels pooling 8/4/2,
    /// BiGRU 32 per direction, dense 32.
    pub fn new(n_classes: usize) -> Self {
        CrnnConfig {
            n_mels: 64,
            conv_channels: vec![128, 128, 128],
            pool_freq: vec![8, 4, 2],
            gru_units: 32,
            dense_units: 32,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0
            || self.gru_units == 0
            || self.dense_units == 0
            || self.n_classes == 0
            || self.conv_channels.is_empty()
        {
            return Err(Error::InvalidParameter("all model dimensions must be positive".into()));
        }
        if self.conv_channels.len() != self.pool_freq.len() {
            return Err(Error::InvalidParameter(format!(
                "conv_channels ({}) and pool_freq ({}) must have equal length",
                self.conv_channels.len(),
                self.pool_freq.len()
            )));
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter("conv channel counts must be positive".into()));
        }
        let mut freq = self.n_mels;
        for (i, &p) in self.pool_freq.iter().enumerate() {
            if p == 0 || freq % p != 0 {
                return Err(Error::InvalidParameter(format!(
                    "pool stage {i} width {p} does not divide remaining frequency {freq}"
                )));
            }
            freq /= p;
        }
        Ok(())
    }

    /// Frequency bins left after each pool stage.
    fn freq_sizes(&self) -> Vec<usize> {
        let mut freq = self.n_mels;
        let mut out = Vec::with_capacity(self.pool_freq.len() + 1);
        out.push(freq);
        for &p in &self.pool_freq {
            freq /= p;
            out.push(freq);
        }
        out
    }

    /// GRU input width: channels times surviving frequency bins.
    fn gru_input(&self) -> usize {
        self.conv_channels.last().unwrap() * self.freq_sizes().last().unwrap()
    }
}

/// One tensor's place inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub dims: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor order inside the flat buffer: per conv stage kernel then bias;
/// forward GRU direction then backward, each as w_z w_r w_n u_z u_r u_n
/// b_z b_r b_n; dense weight/bias; output weight/bias.
fn build_layout(cfg: &CrnnConfig) -> Vec<TensorSpec> {
    let mut layout = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, dims: Vec<usize>| {
        let len: usize = dims.iter().product();
        layout.push(TensorSpec { name, offset, dims });
        offset += len;
    };
    let mut in_ch = 1;
    for (l, &out_ch) in cfg.conv_channels.iter().enumerate() {
        push(format!("conv{l}.kernel"), vec![out_ch, in_ch, 3, 3]);
        push(format!("conv{l}.bias"), vec![out_ch]);
        in_ch = out_ch;
    }
    let h = cfg.gru_units;
    let i = cfg.gru_input();
    for dir in ["fwd", "bwd"] {
        for t in GRU_TENSORS {
            let dims = match t {
                "w_z" | "w_r" | "w_n" => vec![h, i],
                "u_z" | "u_r" | "u_n" => vec![h, h],
                _ => vec![h],
            };
            push(format!("gru.{dir}.{t}"), dims);
        }
    }
    push("dense.weight".into(), vec![cfg.dense_units, 2 * h]);
    push("dense.bias".into(), vec![cfg.dense_units]);
    push("out.weight".into(), vec![cfg.n_classes, cfg.dense_units]);
    push("out.bias".into(), vec![cfg.n_classes]);
    layout
}

/// All network parameters in one flat buffer plus the layout describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnnParameters {
    cfg: CrnnConfig,
    layout: Vec<TensorSpec>,
    data: Vec<f64>,
}

/// Gradients in the same flat layout as [`CrnnParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrnnGradients {
    layout: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl CrnnGradients {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    /// Elementwise sum, for accumulating per-clip gradients.
    pub fn add_assign(&mut self, other: &CrnnGradients) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(
                "gradient accumulation",
                self.data.len().to_string(),
                other.data.len().to_string(),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

// Layout indices, derived from the build order above.
fn idx_conv_kernel(l: usize) -> usize {
    2 * l
}
fn idx_conv_bias(l: usize) -> usize {
    2 * l + 1
}
fn idx_gru(n_conv: usize, dir: usize, tensor: usize) -> usize {
    2 * n_conv + dir * GRU_TENSORS.len() + tensor
}
fn idx_dense_w(n_conv: usize) -> usize {
    2 * n_conv + 2 * GRU_TENSORS.len()
}

impl CrnnParameters {
    pub fn config(&self) -> &CrnnConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    /// An all-zero parameter set (useful for tests and as a gradient shape).
    pub fn zeros(cfg: &CrnnConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(cfg);
        let total = layout.iter().map(TensorSpec::len).sum();
        Ok(CrnnParameters { cfg: cfg.clone(), layout, data: vec![0.0; total] })
    }

    pub fn zero_gradients(&self) -> CrnnGradients {
        CrnnGradients { layout: self.layout.clone(), data: vec![0.0; self.data.len()] }
    }

    /// Rebuild from a flat buffer, e.g. a checkpoint payload.
    pub fn from_flat(cfg: &CrnnConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        if data.len() != p.data.len() {
            return Err(Error::shape(
                "parameter buffer",
                p.data.len().to_string(),
                data.len().to_string(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        p.data = data;
        Ok(p)
    }

    fn slice(&self, idx: usize) -> &[f64] {
        let spec = &self.layout[idx];
        &self.data[spec.offset..spec.offset + spec.len()]
    }

    fn view2(&self, idx: usize) -> ArrayView2<'_, f64> {
        let spec = &self.layout[idx];
        ArrayView2::from_shape((spec.dims[0], spec.dims[1]), self.slice(idx)).unwrap()
    }

    fn view1(&self, idx: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from_shape(self.layout[idx].len(), self.slice(idx)).unwrap()
    }

    /// Conv kernel viewed as (out_ch, in_ch*9) for the im2col product.
    fn conv_kernel_mat(&self, l: usize) -> ArrayView2<'_, f64> {
        let spec = &self.layout[idx_conv_kernel(l)];
        ArrayView2::from_shape(
            (spec.dims[0], spec.dims[1] * 9),
            self.slice(idx_conv_kernel(l)),
        )
        .unwrap()
    }

    fn gru_dir(&self, dir: usize) -> gru::GruDirViews<'_> {
        let n_conv = self.cfg.conv_channels.len();
        gru::GruDirViews {
            w_z: self.view2(idx_gru(n_conv, dir, 0)),
            w_r: self.view2(idx_gru(n_conv, dir, 1)),
            w_n: self.view2(idx_gru(n_conv, dir, 2)),
            u_z: self.view2(idx_gru(n_conv, dir, 3)),
            u_r: self.view2(idx_gru(n_conv, dir, 4)),
            u_n: self.view2(idx_gru(n_conv, dir, 5)),
            b_z: self.view1(idx_gru(n_conv, dir, 6)),
            b_r: self.view1(idx_gru(n_conv, dir, 7)),
            b_n: self.view1(idx_gru(n_conv, dir, 8)),
        }
    }
}

impl CrnnGradients {
    fn slice_mut(&mut self, idx: usize) -> &mut [f64] {
        let spec = &self.layout[idx];
        &mut self.data[spec.offset..spec.offset + spec.len()]
    }

    fn view1_mut(&mut self, idx: usize) -> ArrayViewMut1<'_, f64> {
        let len = self.layout[idx].len();
        ArrayViewMut1::from_shape(len, self.slice_mut(idx)).unwrap()
    }
}

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
/// except the GRU update-gate biases which start at 1.0 so early training
/// favors carrying state. Deterministic in the seed.
pub fn init_params(cfg: &CrnnConfig, seed: u64) -> Result<CrnnParameters> {
    let mut params = CrnnParameters::zeros(cfg)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for idx in 0..params.layout.len() {
        let spec = params.layout[idx].clone();
        let (offset, len) = (spec.offset, spec.len());
        let slice = &mut params.data[offset..offset + len];
        match spec.dims.len() {
            1 => {
                // Bias vector: zero, or one for GRU update gates.
                let fill = if spec.name.ends_with("b_z") { 1.0 } else { 0.0 };
                slice.fill(fill);
            }
            2 => {
                let bound = (6.0 / (spec.dims[0] + spec.dims[1]) as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            4 => {
                let receptive = spec.dims[2] * spec.dims[3];
                let fan_in = spec.dims[1] * receptive;
                let fan_out = spec.dims[0] * receptive;
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            _ => unreachable!("layout holds rank 1, 2, or 4 tensors"),
        }
    }
    Ok(params)
}

/// Everything forward computed that backward needs, plus the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    cfg: CrnnConfig,
    n_frames: usize,
    /// Network input as (1, N, n_mels).
    input: Array3<f64>,
    conv: Vec<ConvTrace>,
    gru_fwd: GruDirTrace,
    gru_bwd: GruDirTrace,
    /// Concatenated GRU outputs, (N, 2H).
    gru_concat: Array2<f64>,
    /// Post-ReLU dense hidden layer, (N, dense_units).
    dense_hidden: Array2<f64>,
    logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// The conv-stack output sequence fed to the GRU, (N, gru_input).
    pub fn conv_sequence(&self) -> Array2<f64> {
        let last = self.conv.last().expect("at least one conv stage");
        conv::to_sequence(&last.pooled)
    }
}

/// Run the network over one clip of features.
pub fn forward(params: &CrnnParameters, x: &FeatureMatrix) -> Result<ForwardTrace> {
    let cfg = &params.cfg;
    let n = x.n_frames();
    if x.n_dims() != cfg.n_mels {
        return Err(Error::shape("model input dims", cfg.n_mels.to_string(), x.n_dims().to_string()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("model input needs at least one frame".into()));
    }

    // (1, N, n_mels) input map.
    let mut input = Array3::zeros((1, n, cfg.n_mels));
    input.index_axis_mut(ndarray::Axis(0), 0).assign(x.values());

    let mut conv_traces = Vec::with_capacity(cfg.conv_channels.len());
    {
        let mut current = &input;
        for l in 0..cfg.conv_channels.len() {
            let stage = ConvStage {
                kernel: params.conv_kernel_mat(l),
                bias: params.view1(idx_conv_bias(l)),
                pool: cfg.pool_freq[l],
            };
            let trace = stage.forward(current);
            conv_traces.push(trace);
            current = &conv_traces.last().unwrap().pooled;
        }
    }
    let sequence = conv::to_sequence(&conv_traces.last().unwrap().pooled);

    let gru_fwd = gru::forward_direction(&params.gru_dir(0), &sequence, false);
    let gru_bwd = gru::forward_direction(&params.gru_dir(1), &sequence, true);

    let h = cfg.gru_units;
    let mut gru_concat = Array2::zeros((n, 2 * h));
    gru_concat.slice_mut(ndarray::s![.., 0..h]).assign(&gru_fwd.h);
    gru_concat.slice_mut(ndarray::s![.., h..2 * h]).assign(&gru_bwd.h);

    let n_conv = cfg.conv_channels.len();
    let dense_w = params.view2(idx_dense_w(n_conv));
    let dense_b = params.view1(idx_dense_w(n_conv) + 1);
    let out_w = params.view2(idx_dense_w(n_conv) + 2);
    let out_b = params.view1(idx_dense_w(n_conv) + 3);

    let mut dense_hidden = gru_concat.dot(&dense_w.t());
    for mut row in dense_hidden.rows_mut() {
        row += &dense_b;
        row.mapv_inplace(|v| v.max(0.0));
    }
    let mut logits = dense_hidden.dot(&out_w.t());
    for mut row in logits.rows_mut() {
        row += &out_b;
    }

    Ok(ForwardTrace {
        cfg: cfg.clone(),
        n_frames: n,
        input,
        conv: conv_traces,
        gru_fwd,
        gru_bwd,
        gru_concat,
        dense_hidden,
        logits,
    })
}

/// Exact reverse-mode gradients of `sum(d_logits * logits)` with respect to
/// every parameter.
pub fn backward(
    params: &CrnnParameters,
    trace: &ForwardTrace,
    d_logits: &Array2<f64>,
) -> Result<CrnnGradients> {
    if trace.cfg != params.cfg {
        return Err(Error::InvalidParameter(
            "forward trace was produced by a different model configuration".into(),
        ));
    }
    if d_logits.dim() != trace.logits.dim() {
        return Err(Error::shape(
            "d_logits",
            format!("{:?}", trace.logits.dim()),
            format!("{:?}", d_logits.dim()),
        ));
    }
    let cfg = &params.cfg;
    let n_conv = cfg.conv_channels.len();
    let h = cfg.gru_units;
    let mut grads = params.zero_gradients();

    // Dense head.
    let out_w = params.view2(idx_dense_w(n_conv) + 2);
    let dense_w = params.view2(idx_dense_w(n_conv));

    let d_out_w = d_logits.t().dot(&trace.dense_hidden);
    let mut d_hidden = d_logits.dot(&out_w);
    ndarray::Zip::from(&mut d_hidden).and(&trace.dense_hidden).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    let d_dense_w = d_hidden.t().dot(&trace.gru_concat);
    let d_concat = d_hidden.dot(&dense_w);

    {
        let idx = idx_dense_w(n_conv);
        grads.slice_mut(idx).copy_from_slice(d_dense_w.as_standard_layout().as_slice().unwrap());
        let mut bias = grads.view1_mut(idx + 1);
        for (j, b) in bias.iter_mut().enumerate() {
            *b = d_hidden.column(j).sum();
        }
        grads.slice_mut(idx + 2).copy_from_slice(d_out_w.as_standard_layout().as_slice().unwrap());
        let mut bias = grads.view1_mut(idx + 3);
        for (j, b) in bias.iter_mut().enumerate() {
            *b = d_logits.column(j).sum();
        }
    }

    // GRU, both directions, accumulating gradient on the shared input
    // sequence.
    let sequence = trace.conv_sequence();
    let d_h_fwd = d_concat.slice(ndarray::s![.., 0..h]).to_owned();
    let d_h_bwd = d_concat.slice(ndarray::s![.., h..2 * h]).to_owned();

    let mut d_sequence = Array2::zeros(sequence.dim());
    for (dir, (trace_dir, d_h)) in
        [(&trace.gru_fwd, d_h_fwd), (&trace.gru_bwd, d_h_bwd)].iter().enumerate()
    {
        let views = params.gru_dir(dir);
        let out = gru::backward_direction(&views, trace_dir, &sequence, d_h, dir == 1);
        d_sequence += &out.d_input;
        for (t, tensor) in out.tensors.into_iter().enumerate() {
            let idx = idx_gru(n_conv, dir, t);
            grads.slice_mut(idx).copy_from_slice(&tensor);
        }
    }

    // Conv stack, last stage first. Stage 0 skips its input gradient.
    let last = trace.conv.last().unwrap();
    let mut d_pooled = conv::from_sequence(&d_sequence, last.pooled.dim());
    for l in (0..n_conv).rev() {
        let stage = ConvStage {
            kernel: params.conv_kernel_mat(l),
            bias: params.view1(idx_conv_bias(l)),
            pool: cfg.pool_freq[l],
        };
        let stage_input_dim =
            if l == 0 { trace.input.dim() } else { trace.conv[l - 1].pooled.dim() };
        let out = stage.backward(stage_input_dim, &trace.conv[l], &d_pooled, l > 0);
        grads.slice_mut(idx_conv_kernel(l)).copy_from_slice(&out.d_kernel);
        grads.slice_mut(idx_conv_bias(l)).copy_from_slice(&out.d_bias);
        if let Some(d_in) = out.d_input {
            d_pooled = d_in;
        }
    }

    Ok(grads)
}
