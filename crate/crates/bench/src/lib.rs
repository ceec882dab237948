//! Seeded inputs shared by the benchmarks.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use carloc_core::boxer::BinaryImage;
use carloc_core::camnet::{Backbone, TrainMeta};
use carloc_core::{BBox, CamModelSpec, CamWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` random boxes inside a `side` x `side` image.
pub fn boxes(n: usize, side: u32, seed: u64) -> Vec<BBox> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (x, y) = (r.random_range(0..side), r.random_range(0..side));
            let w = r.random_range(1..=side - x);
            let h = r.random_range(1..=side - y);
            BBox::new(x as i64, y as i64, w as i64, h as i64).expect("box inside the image")
        })
        .collect()
}

/// Blobby foreground: a few filled discs plus salt noise.
pub fn blobs(side: usize, seed: u64) -> BinaryImage {
    let mut r = rng(seed);
    let centres: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            let s = side as f64;
            (
                r.random_range(0.0..s),
                r.random_range(0.0..s),
                r.random_range(0.05..0.2) * s,
            )
        })
        .collect();
    let values = Array2::from_shape_fn((side, side), |(y, x)| {
        let inside = centres
            .iter()
            .any(|&(cx, cy, rad)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= rad * rad);
        (inside || r.random_bool(0.02)) as u8
    });
    BinaryImage { values }
}

/// Gaussian-free clustered points: `k` centres with uniform spread.
pub fn clustered(n: usize, d: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let centres = Array2::from_shape_fn((k, d), |_| r.random_range(-10.0..10.0));
    Array2::from_shape_fn((n, d), |(i, j)| centres[[i % k, j]] + r.random_range(-1.0..1.0))
}

/// Weights with a random head over `channels` features.
pub fn cam_weights(classes: usize, channels: usize, seed: u64) -> CamWeights {
    let mut r = rng(seed);
    CamWeights {
        spec: CamModelSpec::new("tiny:0", classes),
        backbone: Backbone::from_identifier("tiny:0").expect("built-in backbone"),
        classifier: Array2::from_shape_fn((classes, channels), |_| r.random_range(-0.5..0.5)),
        bias: Array1::from_shape_fn(classes, |_| r.random_range(-0.1..0.1)),
        meta: TrainMeta {
            label_space: "bench".into(),
            vocab: (0..classes).map(|i| format!("c{i}")).collect(),
            epochs: 0,
            seed,
            crop_size: 64,
            epoch_accuracy: vec![],
            epoch_loss: vec![],
        },
    }
}

pub fn features(channels: usize, h: usize, w: usize, seed: u64) -> Array3<f32> {
    let mut r = rng(seed);
    Array3::from_shape_fn((channels, h, w), |_| r.random_range(0.0..1.0))
}
