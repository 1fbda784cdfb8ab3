//! One GRU direction: standard gating (sigmoid update/reset, tanh
//! candidate) with hidden state starting at zero, plus exact
//! backpropagation through time.
//!
//! Per step, with s the logistic sigmoid and x_t the input frame:
//!
//! ```text
//! z_t = s(W_z x_t + U_z h_prev + b_z)
//! r_t = s(W_r x_t + U_r h_prev + b_r)
//! n_t = tanh(W_n x_t + U_n (r_t * h_prev) + b_n)
//! h_t = z_t * h_prev + (1 - z_t) * n_t
//! ```
//!
//! The reverse direction runs the same recurrence over the time-reversed
//! sequence; caches are stored by absolute frame index either way.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::losses::sigmoid;

/// Tensor names in their flat-layout order.
pub(crate) const GRU_TENSORS: [&str; 9] =
    ["w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n"];

pub(crate) struct GruDirViews<'a> {
    pub w_z: ArrayView2<'a, f64>,
    pub w_r: ArrayView2<'a, f64>,
    pub w_n: ArrayView2<'a, f64>,
    pub u_z: ArrayView2<'a, f64>,
    pub u_r: ArrayView2<'a, f64>,
    pub u_n: ArrayView2<'a, f64>,
    pub b_z: ArrayView1<'a, f64>,
    pub b_r: ArrayView1<'a, f64>,
    pub b_n: ArrayView1<'a, f64>,
}

/// Gate and state caches, indexed by absolute frame.
#[derive(Debug, Clone)]
pub(crate) struct GruDirTrace {
    pub z: Array2<f64>,
    pub r: Array2<f64>,
    pub n: Array2<f64>,
    pub h: Array2<f64>,
}

pub(crate) struct GruBackward {
    /// Flat gradients in [`GRU_TENSORS`] order.
    pub tensors: Vec<Vec<f64>>,
    pub d_input: Array2<f64>,
}

pub(crate) fn forward_direction(
    p: &GruDirViews<'_>,
    seq: &Array2<f64>,
    reverse: bool,
) -> GruDirTrace {
    let n_frames = seq.nrows();
    let h_units = p.b_z.len();
    let mut trace = GruDirTrace {
        z: Array2::zeros((n_frames, h_units)),
        r: Array2::zeros((n_frames, h_units)),
        n: Array2::zeros((n_frames, h_units)),
        h: Array2::zeros((n_frames, h_units)),
    };
    // Input projections have no recurrence, so all frames go through one
    // matrix product per gate; the step loop only handles the hidden path.
    let xz = seq.dot(&p.w_z.t());
    let xr = seq.dot(&p.w_r.t());
    let xn = seq.dot(&p.w_n.t());
    let mut h_prev = Array1::zeros(h_units);
    for step in 0..n_frames {
        let t = if reverse { n_frames - 1 - step } else { step };
        let mut z = &xz.row(t) + &p.u_z.dot(&h_prev) + p.b_z;
        z.mapv_inplace(sigmoid);
        let mut r = &xr.row(t) + &p.u_r.dot(&h_prev) + p.b_r;
        r.mapv_inplace(sigmoid);
        let rh = &r * &h_prev;
        let mut n = &xn.row(t) + &p.u_n.dot(&rh) + p.b_n;
        n.mapv_inplace(f64::tanh);
        let h = &z * &h_prev + &(1.0 - &z) * &n;
        trace.z.row_mut(t).assign(&z);
        trace.r.row_mut(t).assign(&r);
        trace.n.row_mut(t).assign(&n);
        trace.h.row_mut(t).assign(&h);
        h_prev = h;
    }
    trace
}

/// Backpropagation through time for one direction. `d_h` is the gradient
/// arriving at each step's hidden output from the layers above.
pub(crate) fn backward_direction(
    p: &GruDirViews<'_>,
    trace: &GruDirTrace,
    seq: &Array2<f64>,
    d_h: &Array2<f64>,
    reverse: bool,
) -> GruBackward {
    let n_frames = seq.nrows();
    let h_units = p.b_z.len();

    // The step loop only resolves the recurrence: pre-activation gate
    // gradients per frame plus the carry into the previous hidden state.
    // Everything without a sequential dependency (weight, bias, and input
    // gradients) is batched into matrix products afterwards.
    let mut dz = Array2::zeros((n_frames, h_units));
    let mut dr = Array2::zeros((n_frames, h_units));
    let mut dn = Array2::zeros((n_frames, h_units));
    // Row t holds this step's h_prev; rows double as the d_u_* factor.
    let mut h_prev_all = Array2::zeros((n_frames, h_units));
    let mut rh_all = Array2::zeros((n_frames, h_units));

    let zeros = Array1::zeros(h_units);
    let mut carry = Array1::zeros(h_units);
    for step in (0..n_frames).rev() {
        let t = if reverse { n_frames - 1 - step } else { step };
        let h_prev = if step == 0 {
            zeros.view()
        } else {
            let t_prev = if reverse { t + 1 } else { t - 1 };
            trace.h.row(t_prev)
        };
        let z = trace.z.row(t);
        let r = trace.r.row(t);
        let n = trace.n.row(t);

        let dh = &d_h.row(t) + &carry;
        let dn_pre: Array1<f64> = (0..h_units)
            .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
            .collect();
        let dz_pre: Array1<f64> = (0..h_units)
            .map(|i| dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let a = p.u_n.t().dot(&dn_pre);
        let dr_pre: Array1<f64> =
            (0..h_units).map(|i| a[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect();

        let mut d_h_prev = p.u_z.t().dot(&dz_pre) + p.u_r.t().dot(&dr_pre);
        for i in 0..h_units {
            d_h_prev[i] += dh[i] * z[i] + a[i] * r[i];
        }

        for i in 0..h_units {
            rh_all[[t, i]] = r[i] * h_prev[i];
        }
        h_prev_all.row_mut(t).assign(&h_prev);
        dz.row_mut(t).assign(&dz_pre);
        dr.row_mut(t).assign(&dr_pre);
        dn.row_mut(t).assign(&dn_pre);

        carry = d_h_prev;
    }

    let d_input = dz.dot(&p.w_z) + dr.dot(&p.w_r) + dn.dot(&p.w_n);
    let flat2 = |a: Array2<f64>| a.into_iter().collect::<Vec<f64>>();
    let col_sums = |a: &Array2<f64>| {
        (0..h_units).map(|i| a.column(i).sum()).collect::<Vec<f64>>()
    };
    GruBackward {
        tensors: vec![
            flat2(dz.t().dot(seq)),
            flat2(dr.t().dot(seq)),
            flat2(dn.t().dot(seq)),
            flat2(dz.t().dot(&h_prev_all)),
            flat2(dr.t().dot(&h_prev_all)),
            flat2(dn.t().dot(&rh_all)),
            col_sums(&dz),
            col_sums(&dr),
            col_sums(&dn),
        ],
        d_input,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Owned {
        w_z: Array2<f64>,
        w_r: Array2<f64>,
        w_n: Array2<f64>,
        u_z: Array2<f64>,
        u_r: Array2<f64>,
        u_n: Array2<f64>,
        b_z: Array1<f64>,
        b_r: Array1<f64>,
        b_n: Array1<f64>,
    }

    impl Owned {
        fn random(rng: &mut ChaCha20Rng, h: usize, i: usize) -> Self {
            let m2 = |r: usize, c: usize, rng: &mut ChaCha20Rng| {
                Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.5..0.5))
            };
            Owned {
                w_z: m2(h, i, rng),
                w_r: m2(h, i, rng),
                w_n: m2(h, i, rng),
                u_z: m2(h, h, rng),
                u_r: m2(h, h, rng),
                u_n: m2(h, h, rng),
                b_z: Array1::from_shape_fn(h, |_| rng.gen_range(-0.5..0.5)),
                b_r: Array1::from_shape_fn(h, |_| rng.gen_range(-0.5..0.5)),
                b_n: Array1::from_shape_fn(h, |_| rng.gen_range(-0.5..0.5)),
            }
        }

        fn views(&self) -> GruDirViews<'_> {
            GruDirViews {
                w_z: self.w_z.view(),
                w_r: self.w_r.view(),
                w_n: self.w_n.view(),
                u_z: self.u_z.view(),
                u_r: self.u_r.view(),
                u_n: self.u_n.view(),
                b_z: self.b_z.view(),
                b_r: self.b_r.view(),
                b_n: self.b_n.view(),
            }
        }
    }

    #[test]
    fn length_one_sequence_ignores_recurrence() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p = Owned::random(&mut rng, 4, 5);
        let seq = Array2::from_shape_fn((1, 5), |_| rng.gen_range(-1.0..1.0));
        let fwd = forward_direction(&p.views(), &seq, false);
        let bwd = forward_direction(&p.views(), &seq, true);
        // With h_0 = 0 both directions compute the same single step.
        assert_eq!(fwd.h, bwd.h);
        // h = (1 - z) * n when h_prev = 0.
        for i in 0..4 {
            assert_relative_eq!(
                fwd.h[[0, i]],
                (1.0 - fwd.z[[0, i]]) * fwd.n[[0, i]],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn reverse_direction_mirrors_reversed_sequence() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let p = Owned::random(&mut rng, 3, 4);
        let n = 6;
        let seq = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
        let mut flipped = Array2::zeros((n, 4));
        for t in 0..n {
            flipped.row_mut(t).assign(&seq.row(n - 1 - t));
        }
        let rev = forward_direction(&p.views(), &seq, true);
        let fwd_on_flipped = forward_direction(&p.views(), &flipped, false);
        for t in 0..n {
            for i in 0..3 {
                assert_eq!(rev.h[[t, i]], fwd_on_flipped.h[[n - 1 - t, i]]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar objective sum(d * h) over all steps, checked for every
        // GRU tensor entry in both directions.
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let (h, i, n) = (3, 4, 5);
        let mut p = Owned::random(&mut rng, h, i);
        let seq = Array2::from_shape_fn((n, i), |_| rng.gen_range(-1.0..1.0));
        let d = Array2::from_shape_fn((n, h), |_| rng.gen_range(-1.0..1.0));

        for reverse in [false, true] {
            let trace = forward_direction(&p.views(), &seq, reverse);
            let out = backward_direction(&p.views(), &trace, &seq, &d, reverse);

            let objective = |p: &Owned, seq: &Array2<f64>| -> f64 {
                let t = forward_direction(&p.views(), seq, reverse);
                (&d * &t.h).sum()
            };

            let step = 1e-6;
            // Spot-check a handful of entries in every tensor.
            for tensor in 0..9 {
                let len = out.tensors[tensor].len();
                fn slot(p: &mut Owned, tensor: usize, k: usize) -> &mut f64 {
                    match tensor {
                        0 => &mut p.w_z.as_slice_mut().unwrap()[k],
                        1 => &mut p.w_r.as_slice_mut().unwrap()[k],
                        2 => &mut p.w_n.as_slice_mut().unwrap()[k],
                        3 => &mut p.u_z.as_slice_mut().unwrap()[k],
                        4 => &mut p.u_r.as_slice_mut().unwrap()[k],
                        5 => &mut p.u_n.as_slice_mut().unwrap()[k],
                        6 => &mut p.b_z.as_slice_mut().unwrap()[k],
                        7 => &mut p.b_r.as_slice_mut().unwrap()[k],
                        _ => &mut p.b_n.as_slice_mut().unwrap()[k],
                    }
                }
                for k in (0..len).step_by(1 + len / 7) {
                    let grad = out.tensors[tensor][k];
                    let orig = *slot(&mut p, tensor, k);
                    *slot(&mut p, tensor, k) = orig + step;
                    let up = objective(&p, &seq);
                    *slot(&mut p, tensor, k) = orig - step;
                    let down = objective(&p, &seq);
                    *slot(&mut p, tensor, k) = orig;
                    let fd = (up - down) / (2.0 * step);
                    assert_relative_eq!(grad, fd, max_relative = 1e-5, epsilon = 1e-9);
                }
            }

            // Input gradient.
            for t in 0..n {
                for j in (0..i).step_by(2) {
                    let mut pert = seq.clone();
                    pert[[t, j]] += step;
                    let up = objective(&p, &pert);
                    pert[[t, j]] -= 2.0 * step;
                    let down = objective(&p, &pert);
                    let fd = (up - down) / (2.0 * step);
                    assert_relative_eq!(out.d_input[[t, j]], fd, max_relative = 1e-5, epsilon = 1e-9);
                }
            }
        }
    }
}
