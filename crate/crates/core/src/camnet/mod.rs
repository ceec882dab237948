//! CAM-constrained classifier: a truncated convolutional backbone followed by
//! global average pooling and one linear layer. Trained as an ordinary
//! classifier; at inference the linear weights are applied per location
//! (followed by ReLU) to produce class activation maps.

mod backbone;
mod cam;
mod io;
pub(crate) mod layers;
mod preprocess;
mod pretext;
mod train;

use std::path::PathBuf;

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ImageRef;
use crate::tensorfile::TensorFileError;

pub use backbone::{Backbone, Stage, TINY_CHANNELS, TINY_POOLS};
pub use cam::{cam_map, class_logits, infer_heatmap};
pub use io::{heatmap_file_stem, load_heatmap, load_heatmap_dir, save_heatmap, save_heatmap_pgm, HeatmapSidecar};
pub use preprocess::{preprocess_center, preprocess_eval, preprocess_tensor_eval, preprocess_train};
pub use pretext::{
    pretext_corpus, pretext_vocab, pretrain_backbone, render_pretext_sample, PretextConfig, PRETEXT_BACKBONE,
    SHAPE_CLASSES, VEHICLE_CLASSES,
};
pub use train::{train, CamWeights, TrainMeta};

#[derive(Debug, Error)]
pub enum CamError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("class index {index} out of range for {num_classes} classes")]
    IndexOutOfRange { index: usize, num_classes: usize },
    #[error("image {id}: {msg}")]
    Image { id: String, msg: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorFileError> for CamError {
    fn from(e: TensorFileError) -> Self {
        match e {
            TensorFileError::Io { path, source } => CamError::Io { path, source },
            TensorFileError::Format { path, msg } => CamError::Format(format!("{path}: {msg}")),
        }
    }
}

fn default_truncate() -> usize {
    4
}

fn default_frozen() -> Vec<usize> {
    vec![1]
}

fn yes() -> bool {
    true
}

/// Network layout: which backbone, how much of it, which stages stay frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamModelSpec {
    pub backbone: String,
    /// Number of leading backbone stages kept (1-based index of the last one).
    #[serde(default = "default_truncate")]
    pub truncate_after: usize,
    pub num_classes: usize,
    /// 1-based stage indices whose parameters are never updated.
    #[serde(default = "default_frozen")]
    pub frozen_stages: Vec<usize>,
    /// Add the classifier bias before the ReLU when computing maps.
    #[serde(default = "yes")]
    pub cam_bias: bool,
}

impl CamModelSpec {
    pub fn new(backbone: &str, num_classes: usize) -> Self {
        CamModelSpec {
            backbone: backbone.to_string(),
            truncate_after: default_truncate(),
            num_classes,
            frozen_stages: default_frozen(),
            cam_bias: true,
        }
    }

    pub fn validate(&self) -> Result<(), CamError> {
        if self.num_classes < 2 {
            return Err(CamError::InvalidSpec(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if let Some(&s) = self.frozen_stages.iter().find(|&&s| s == 0 || s > self.truncate_after) {
            return Err(CamError::InvalidSpec(format!(
                "frozen stage {s} is not among retained stages 1..={}",
                self.truncate_after
            )));
        }
        Ok(())
    }

    pub fn is_frozen(&self, stage_index0: usize) -> bool {
        self.frozen_stages.contains(&(stage_index0 + 1))
    }
}

/// Optimisation settings. Defaults are the reference fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub crop_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            crop_size: 512,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CamError> {
        let bad = |m: &str| Err(CamError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.crop_size < 64 {
            return bad("crop_size must be at least 64");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

/// A class activation map with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `(rows, cols)` grid of non-negative activations.
    pub values: Array2<f32>,
    pub image_id: String,
    pub class_index: usize,
    /// `(height, width)` of the image the map was computed for.
    pub source_size: (u32, u32),
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Supplies decoded images for manifest entries.
pub trait ImageSource: Sync {
    fn load(&self, image: &ImageRef) -> Result<RgbImage, CamError>;
}

/// Reads images from disk, resolving relative paths against `base`.
#[derive(Debug, Clone)]
pub struct DiskImages {
    pub base: PathBuf,
}

impl DiskImages {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        DiskImages { base: base.into() }
    }

    /// Images relative to the directory holding `manifest_path`.
    pub fn for_manifest(manifest_path: &std::path::Path) -> Self {
        DiskImages {
            base: manifest_path
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }
}

impl ImageSource for DiskImages {
    fn load(&self, image: &ImageRef) -> Result<RgbImage, CamError> {
        let p = std::path::Path::new(&image.path);
        let p = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        };
        image::open(&p).map(|i| i.to_rgb8()).map_err(|e| CamError::Image {
            id: image.id.clone(),
            msg: format!("{}: {e}", p.display()),
        })
    }
}

/// In-memory images keyed by id.
#[derive(Debug, Clone, Default)]
pub struct MemoryImages(pub std::collections::HashMap<String, RgbImage>);

impl ImageSource for MemoryImages {
    fn load(&self, image: &ImageRef) -> Result<RgbImage, CamError> {
        self.0.get(&image.id).cloned().ok_or_else(|| CamError::Image {
            id: image.id.clone(),
            msg: "not in memory image set".into(),
        })
    }
}
