//! Planar float rasters: conversion from 8-bit RGB, bilinear resampling, mirroring,
//! and channel normalization.
//!
//! Tensors are channel-major `(C, H, W)`.

use image::RgbImage;
use ndarray::{Array2, Array3, ArrayView2, Axis};

/// Per-channel mean of the backbone pretraining corpus (ImageNet convention).
pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// Per-channel standard deviation matching [`CHANNEL_MEAN`].
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// RGB bytes to `(3, H, W)` floats in `[0, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut t = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t[[c, y as usize, x as usize]] = px[c] as f32 / 255.0;
        }
    }
    t
}

/// Subtracts [`CHANNEL_MEAN`] and divides by [`CHANNEL_STD`] in place.
pub fn normalize(t: &mut Array3<f32>) {
    for (c, mut plane) in t.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (CHANNEL_MEAN[c % 3], CHANNEL_STD[c % 3]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
}

/// Source taps and weights for one output axis (half-pixel centers, edge clamped).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = (src - i0 as f64) as f32;
            (i0, i1, frac.clamp(0.0, 1.0))
        })
        .collect()
}

/// Bilinear resample of one plane to `height` x `width`.
pub fn resize_plane(src: ArrayView2<'_, f32>, height: usize, width: usize) -> Array2<f32> {
    let (ih, iw) = src.dim();
    if (ih, iw) == (height, width) {
        return src.to_owned();
    }
    let ys = axis_taps(ih, height);
    let xs = axis_taps(iw, width);
    let mut out = Array2::zeros((height, width));
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[oy, ox]] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Bilinear resample of every channel.
pub fn resize_tensor(t: &Array3<f32>, height: usize, width: usize) -> Array3<f32> {
    let c = t.dim().0;
    let mut out = Array3::zeros((c, height, width));
    for (i, plane) in t.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), i)
            .assign(&resize_plane(plane, height, width));
    }
    out
}

pub fn mirror_plane(m: &Array2<f32>) -> Array2<f32> {
    let mut out = m.clone();
    out.invert_axis(Axis(1));
    out.as_standard_layout().to_owned()
}

pub fn mirror_tensor(t: &Array3<f32>) -> Array3<f32> {
    let mut out = t.clone();
    out.invert_axis(Axis(2));
    out.as_standard_layout().to_owned()
}
