//! Benchmarks for the numeric hot paths: the three losses on a full clip,
//! forward and backward passes of the reduced CRNN, and segment evaluation.
//!
//! Run with `cargo bench -p sedkit-bench`.

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use sedkit_core::eventroll::{EventRoll, FrameParams};
use sedkit_core::losses::{
    bce_loss, duration_robust_loss, inverse_freq_loss, FocusingWeight, InverseFreqConfig,
};
use sedkit_core::metrics::{evaluate, SegmentParams};
use sedkit_core::model::{backward, forward, init_params, CrnnConfig};
use sedkit_core::FeatureMatrix;

/// One 10 s clip on the default grid: 499 frames.
const N_FRAMES: usize = 499;
const N_CLASSES: usize = 25;

fn random_roll(rng: &mut ChaCha20Rng, n: usize, m: usize, density: f64) -> EventRoll {
    let mut roll = EventRoll::zeros(n, m);
    for f in 0..n {
        for c in 0..m {
            if rng.gen_bool(density) {
                roll.set_active(f, c);
            }
        }
    }
    roll
}

fn bench_losses(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let logits = Array2::from_shape_fn((N_FRAMES, N_CLASSES), |_| rng.gen_range(-4.0..4.0));
    let roll = random_roll(&mut rng, N_FRAMES, N_CLASSES, 0.2);

    let mut group = c.benchmark_group("losses_499x25");
    group.bench_function("bce", |b| b.iter(|| bce_loss(&logits, &roll).unwrap()));
    let cfg = InverseFreqConfig::new(500.0).unwrap();
    group.bench_function("inverse_freq", |b| {
        b.iter(|| inverse_freq_loss(&logits, &roll, cfg).unwrap())
    });
    let g = FocusingWeight::new(2.0).unwrap();
    group.bench_function("duration_robust", |b| {
        b.iter(|| duration_robust_loss(&logits, &roll, g).unwrap())
    });
    group.finish();
}

fn bench_model(c: &mut Criterion) {
    let cfg = CrnnConfig {
        n_mels: 64,
        conv_channels: vec![16, 16, 16],
        pool_freq: vec![8, 4, 2],
        gru_units: 8,
        dense_units: 32,
        n_classes: 6,
    };
    let params = init_params(&cfg, 1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let features =
        FeatureMatrix::new(Array2::from_shape_fn((N_FRAMES, cfg.n_mels), |_| {
            rng.gen_range(-2.0..2.0)
        }))
        .unwrap();
    let trace = forward(&params, &features).unwrap();
    let d_logits = Array2::from_shape_fn(trace.logits().dim(), |_| rng.gen_range(-1.0..1.0));

    let mut group = c.benchmark_group("crnn_reduced_499x64");
    group.sample_size(20);
    group.bench_function("forward", |b| b.iter(|| forward(&params, &features).unwrap()));
    group.bench_function("backward", |b| {
        b.iter(|| backward(&params, &trace, &d_logits).unwrap())
    });
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let reference = random_roll(&mut rng, N_FRAMES, N_CLASSES, 0.2);
    let predicted = random_roll(&mut rng, N_FRAMES, N_CLASSES, 0.2);
    let fp = FrameParams::default();
    let sp = SegmentParams::new(1.0).unwrap();
    c.bench_function("evaluate_499x25", |b| {
        b.iter(|| evaluate(&reference, &predicted, &fp, sp).unwrap())
    });
}

criterion_group!(benches, bench_losses, bench_model, bench_evaluation);
criterion_main!(benches);
