//! One conv stage: 3x3 same-padded convolution via im2col and a matrix
//! product, ReLU, then max pooling over the frequency axis only.
//!
//! Activations are (channels, time, freq). The im2col patch matrix has one
//! row per (time, freq) position and one column per (in_channel, dt, df)
//! tap, so convolution, its kernel gradient, and its input gradient are all
//! single matrix products.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

pub(crate) struct ConvStage<'a> {
    /// Kernel viewed as (out_ch, in_ch * 9).
    pub kernel: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
    /// Frequency pool width; 1 disables pooling.
    pub pool: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvTrace {
    /// im2col matrix of the stage input, reused by the backward pass.
    pub patches: Array2<f64>,
    /// Post-ReLU activations, (out_ch, N, F).
    pub postrelu: Array3<f64>,
    /// Winning offset within each pool window, (out_ch, N, F/pool).
    pub argmax: Array3<u8>,
    /// Pooled activations, (out_ch, N, F/pool).
    pub pooled: Array3<f64>,
}

pub(crate) struct ConvBackward {
    /// Flat (out_ch, in_ch, 3, 3) kernel gradient.
    pub d_kernel: Vec<f64>,
    pub d_bias: Vec<f64>,
    /// Gradient w.r.t. the stage input, skipped for the first stage.
    pub d_input: Option<Array3<f64>>,
}

/// Patch matrix of `input` (C, N, F): row t*F+f holds the 3x3 neighborhood
/// of every input channel at (t, f), zero outside the map.
///
/// Hot path: the tap at (t, f, c, dt) covers source cells (f-1..f+2) of one
/// contiguous input row, so each inner step is a short slice copy instead of
/// per-cell indexing.
fn im2col(input: &Array3<f64>) -> Array2<f64> {
    let (c_in, n, f_dim) = input.dim();
    let mut patches = Array2::zeros((n * f_dim, c_in * 9));
    let src_all = input.as_slice().expect("input is standard layout");
    let dst_all = patches.as_slice_mut().expect("patches is standard layout");
    let row_w = c_in * 9;
    for t in 0..n {
        for dt in 0..3usize {
            let tt = t + dt;
            if tt < 1 || tt > n {
                continue;
            }
            for c in 0..c_in {
                let src_row = &src_all[(c * n + tt - 1) * f_dim..][..f_dim];
                for f in 0..f_dim {
                    let base = (t * f_dim + f) * row_w + c * 9 + dt * 3;
                    let lo = usize::from(f == 0);
                    let hi = (f_dim + 1 - f).min(3);
                    dst_all[base + lo..base + hi]
                        .copy_from_slice(&src_row[f + lo - 1..f + hi - 1]);
                }
            }
        }
    }
    patches
}

/// Scatter-add of a patch-matrix gradient back onto the input map.
fn col2im(d_patches: &Array2<f64>, dim: (usize, usize, usize)) -> Array3<f64> {
    let (c_in, n, f_dim) = dim;
    let mut d_input = Array3::zeros(dim);
    for t in 0..n {
        for f in 0..f_dim {
            let row = t * f_dim + f;
            for c in 0..c_in {
                for dt in 0..3usize {
                    let tt = t + dt;
                    if tt < 1 || tt > n {
                        continue;
                    }
                    for df in 0..3usize {
                        let ff = f + df;
                        if ff < 1 || ff > f_dim {
                            continue;
                        }
                        d_input[[c, tt - 1, ff - 1]] += d_patches[[row, c * 9 + dt * 3 + df]];
                    }
                }
            }
        }
    }
    d_input
}

impl ConvStage<'_> {
    pub fn forward(&self, input: &Array3<f64>) -> ConvTrace {
        let (_, n, f_dim) = input.dim();
        let out_ch = self.kernel.nrows();
        let patches = im2col(input);
        let mut flat = patches.dot(&self.kernel.t());
        {
            let bias = self.bias.as_slice().expect("bias view is contiguous");
            let data = flat.as_slice_mut().expect("flat is standard layout");
            for row in data.chunks_exact_mut(out_ch) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = (*v + b).max(0.0);
                }
            }
        }

        let mut postrelu = Array3::zeros((out_ch, n, f_dim));
        {
            let flat_s = flat.as_slice().expect("flat is standard layout");
            let post_s = postrelu.as_slice_mut().expect("postrelu is standard layout");
            let plane = n * f_dim;
            for (rowi, row) in flat_s.chunks_exact(out_ch).enumerate() {
                for (o, &v) in row.iter().enumerate() {
                    post_s[o * plane + rowi] = v;
                }
            }
        }

        let f_out = f_dim / self.pool;
        let mut pooled = Array3::zeros((out_ch, n, f_out));
        let mut argmax = Array3::zeros((out_ch, n, f_out));
        {
            let post_s = postrelu.as_slice().expect("postrelu is standard layout");
            let pooled_s = pooled.as_slice_mut().expect("pooled is standard layout");
            let arg_s = argmax.as_slice_mut().expect("argmax is standard layout");
            for o in 0..out_ch {
                for t in 0..n {
                    let src = &post_s[(o * n + t) * f_dim..][..f_dim];
                    let dst_base = (o * n + t) * f_out;
                    for b in 0..f_out {
                        let win = &src[b * self.pool..(b + 1) * self.pool];
                        let mut best = 0usize;
                        // Strict comparison: ties go to the first position.
                        for (w, &v) in win.iter().enumerate().skip(1) {
                            if v > win[best] {
                                best = w;
                            }
                        }
                        pooled_s[dst_base + b] = win[best];
                        arg_s[dst_base + b] = best as u8;
                    }
                }
            }
        }
        ConvTrace { patches, postrelu, argmax, pooled }
    }

    pub fn backward(
        &self,
        stage_input_dim: (usize, usize, usize),
        trace: &ConvTrace,
        d_pooled: &Array3<f64>,
        want_d_input: bool,
    ) -> ConvBackward {
        let (out_ch, n, f_out) = trace.pooled.dim();
        let f_dim = f_out * self.pool;

        // Route pooled gradients to the winning pre-pool position, gated by
        // the ReLU (a max of exactly 0 carries no gradient). The bias
        // gradient is the sum of exactly these routed values.
        let mut d_flat = Array2::zeros((n * f_dim, out_ch));
        let mut d_bias = vec![0.0; out_ch];
        {
            let post_s = trace.postrelu.as_slice().expect("postrelu is standard layout");
            let arg_s = trace.argmax.as_slice().expect("argmax is standard layout");
            let dp_s = d_pooled.as_slice().expect("d_pooled is standard layout");
            let df_s = d_flat.as_slice_mut().expect("d_flat is standard layout");
            for o in 0..out_ch {
                for t in 0..n {
                    let post_base = (o * n + t) * f_dim;
                    let pool_base = (o * n + t) * f_out;
                    for b in 0..f_out {
                        let f = b * self.pool + arg_s[pool_base + b] as usize;
                        if post_s[post_base + f] > 0.0 {
                            let v = dp_s[pool_base + b];
                            df_s[(t * f_dim + f) * out_ch + o] = v;
                            d_bias[o] += v;
                        }
                    }
                }
            }
        }

        let d_kernel_mat = d_flat.t().dot(&trace.patches);
        let d_kernel = d_kernel_mat.iter().copied().collect();

        let d_input = want_d_input.then(|| {
            let d_patches = d_flat.dot(&self.kernel);
            col2im(&d_patches, stage_input_dim)
        });

        ConvBackward { d_kernel, d_bias, d_input }
    }
}

/// Flatten (C, N, F) activations to an (N, C*F) frame sequence.
pub(crate) fn to_sequence(pooled: &Array3<f64>) -> Array2<f64> {
    let (c, n, f) = pooled.dim();
    let mut seq = Array2::zeros((n, c * f));
    for ch in 0..c {
        for t in 0..n {
            for fr in 0..f {
                seq[[t, ch * f + fr]] = pooled[[ch, t, fr]];
            }
        }
    }
    seq
}

/// Inverse of [`to_sequence`] for gradients.
pub(crate) fn from_sequence(d_seq: &Array2<f64>, dim: (usize, usize, usize)) -> Array3<f64> {
    let (c, n, f) = dim;
    let mut out = Array3::zeros(dim);
    for ch in 0..c {
        for t in 0..n {
            for fr in 0..f {
                out[[ch, t, fr]] = d_seq[[t, ch * f + fr]];
            }
        }
    }
    out
}
