//! Heatmap to bounding box: grayscale normalisation, thresholding, closing,
//! border following, largest component, bounding rectangle.

mod contours;
mod morph;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{GrayImage as LumaImage, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camnet::Heatmap;
use crate::geometry::BBox;
use crate::raster::resize_plane;

pub use contours::{bounding_rect, find_all_contours, find_contours, largest_contour, Contour};
pub use morph::{dilate, erode, morph_close};

#[derive(Debug, Error)]
pub enum BoxerError {
    #[error("threshold fraction must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("invalid boxer config: {0}")]
    InvalidConfig(String),
    #[error("no contours to choose from")]
    EmptyContourSet,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> BoxerError {
    BoxerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 8-bit intensities, `(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub values: Array2<u8>,
}

impl GrayImage {
    pub fn to_image(&self) -> LumaImage {
        let (h, w) = self.values.dim();
        LumaImage::from_fn(w as u32, h as u32, |x, y| Luma([self.values[[y as usize, x as usize]]]))
    }

    pub fn from_image(img: &LumaImage) -> Self {
        let (w, h) = img.dimensions();
        GrayImage {
            values: Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0]),
        }
    }
}

/// Bit image stored as 0/1 bytes, `(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub values: Array2<u8>,
}

impl BinaryImage {
    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

fn default_threshold() -> f64 {
    0.2
}
fn default_kernel() -> usize {
    3
}
fn default_iterations() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxerConfig {
    #[serde(default = "default_threshold")]
    pub threshold_fraction: f64,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

impl Default for BoxerConfig {
    fn default() -> Self {
        BoxerConfig {
            threshold_fraction: default_threshold(),
            kernel_size: default_kernel(),
            iterations: default_iterations(),
        }
    }
}

impl BoxerConfig {
    pub fn validate(&self) -> Result<(), BoxerError> {
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(BoxerError::InvalidThreshold(self.threshold_fraction));
        }
        if self.kernel_size % 2 == 0 {
            return Err(BoxerError::InvalidConfig(format!(
                "kernel_size must be odd and at least 1, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// `floor(255 (v - min) / (max - min))`; all zeros for a constant map.
pub fn to_grayscale(h: &Heatmap) -> GrayImage {
    let (lo, hi) = h
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi as f64 - lo as f64;
    let values = if !(range > 0.0) || !range.is_finite() {
        Array2::zeros(h.values.raw_dim())
    } else {
        h.values
            .mapv(|v| ((255.0 * (v as f64 - lo as f64) / range).floor()).clamp(0.0, 255.0) as u8)
    };
    GrayImage { values }
}

/// Pixels at or above `round(255 * threshold_fraction)` become 1.
pub fn binarize(g: &GrayImage, threshold_fraction: f64) -> Result<BinaryImage, BoxerError> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(BoxerError::InvalidThreshold(threshold_fraction));
    }
    let cut = (255.0 * threshold_fraction).round() as u8;
    Ok(BinaryImage {
        values: g.values.mapv(|v| (v >= cut) as u8),
    })
}

/// Single box for a heatmap, total over finite inputs.
///
/// Maps not at the source image size are bilinearly resampled to it first.
/// An empty foreground at any point yields the whole image. The config is
/// assumed valid; see [`BoxerConfig::validate`].
pub fn heatmap_to_bbox(h: &Heatmap, cfg: &BoxerConfig) -> BBox {
    let (sh, sw) = h.source_size;
    let whole = BBox::whole_image(sw, sh).expect("heatmap source size is positive");
    let g = if h.values.dim() == (sh as usize, sw as usize) {
        to_grayscale(h)
    } else {
        let up = Heatmap {
            values: resize_plane(h.values.view(), sh as usize, sw as usize),
            ..h.clone()
        };
        to_grayscale(&up)
    };
    let Ok(b) = binarize(&g, cfg.threshold_fraction) else {
        return whole;
    };
    if b.count_ones() == 0 {
        return whole;
    }
    let closed = morph_close(&b, cfg.kernel_size, cfg.iterations);
    let cs = find_contours(&closed);
    match largest_contour(&cs) {
        Ok(c) => bounding_rect(c).clip(sw, sh).unwrap_or(whole),
        Err(_) => whole,
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub bbox: BBox,
}

pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<(), BoxerError> {
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p).expect("prediction serializes");
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| io_err(path, e))
}

/// Reads a JSON-lines predictions file; blank lines are skipped, duplicates kept.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, BoxerError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| BoxerError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
