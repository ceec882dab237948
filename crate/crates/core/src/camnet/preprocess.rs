use image::RgbImage;
use ndarray::{s, Array3};
use rand::Rng;

use crate::raster::{mirror_tensor, normalize, resize_tensor, rgb_to_tensor};

/// Output size when scaling so the shorter side becomes `target`.
fn shorter_side_to(h: usize, w: usize, target: usize) -> (usize, usize) {
    if h <= w {
        let nw = ((w as f64 * target as f64 / h as f64).round() as usize).max(target);
        (target, nw)
    } else {
        let nh = ((h as f64 * target as f64 / w as f64).round() as usize).max(target);
        (nh, target)
    }
}

/// Training view: shorter side scaled to `crop_size`, random `crop_size`^2 crop,
/// horizontal flip with probability 0.5, channel normalisation.
pub fn preprocess_train<R: Rng>(image: &RgbImage, crop_size: usize, rng: &mut R) -> Array3<f32> {
    let t = rgb_to_tensor(image);
    let (_, h, w) = t.dim();
    let (nh, nw) = shorter_side_to(h, w, crop_size);
    let r = resize_tensor(&t, nh, nw);
    let oy = rng.random_range(0..=nh - crop_size);
    let ox = rng.random_range(0..=nw - crop_size);
    let mut c = r.slice(s![.., oy..oy + crop_size, ox..ox + crop_size]).to_owned();
    if rng.random_bool(0.5) {
        c = mirror_tensor(&c);
    }
    normalize(&mut c);
    c
}

/// Evaluation views: the normalised original, and its mirror image rescaled by
/// one half (dimensions floored), also normalised.
pub fn preprocess_eval(image: &RgbImage) -> (Array3<f32>, Array3<f32>) {
    preprocess_tensor_eval(&rgb_to_tensor(image))
}

/// [`preprocess_eval`] on an un-normalised `(3, H, W)` tensor in `[0, 1]`.
pub fn preprocess_tensor_eval(t: &Array3<f32>) -> (Array3<f32>, Array3<f32>) {
    let (_, h, w) = t.dim();
    let mut flipped = resize_tensor(&mirror_tensor(t), (h / 2).max(1), (w / 2).max(1));
    let mut original = t.clone();
    normalize(&mut original);
    normalize(&mut flipped);
    (original, flipped)
}

/// Deterministic view for embedding extraction: shorter side scaled to `size`,
/// centre `size`^2 crop, normalised.
pub fn preprocess_center(image: &RgbImage, size: usize) -> Array3<f32> {
    let t = rgb_to_tensor(image);
    let (_, h, w) = t.dim();
    let (nh, nw) = shorter_side_to(h, w, size);
    let r = resize_tensor(&t, nh, nw);
    let (oy, ox) = ((nh - size) / 2, (nw - size) / 2);
    let mut c = r.slice(s![.., oy..oy + size, ox..ox + size]).to_owned();
    normalize(&mut c);
    c
}
