//! Generic pretraining for the built-in backbone.
//!
//! Most images show one filled or outlined primitive (the label) among small
//! clutter blobs on a noisy tinted background. The rest are synthetic cars
//! labelled only by coarse body family, never by model or year. A backbone
//! trained on this has generic edge, blob and colour detectors plus coarse
//! vehicle features, which is the role an ImageNet-pretrained extractor plays
//! at full scale.

use std::collections::{BTreeMap, HashMap};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, Backbone, CamError, CamModelSpec, MemoryImages, TrainConfig};
use crate::geometry::BBox;
use crate::ingest::synth::{hsv_to_rgb, to_px};
use crate::ingest::{render_sample, DatasetManifest, ManifestRecord, Split, SynthConfig};
use crate::labeling::{LabelAssignment, LabelKind};

pub const SHAPE_CLASSES: [&str; 8] = ["disc", "ring", "square", "frame", "triangle", "hbar", "vbar", "cross"];
/// Backbone identifier that pipelines resolve by pretraining on this corpus.
pub const PRETEXT_BACKBONE: &str = "pretext";

pub const VEHICLE_CLASSES: [&str; 4] = ["saloon", "compact", "van", "pickup"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretextConfig {
    pub n_images: usize,
    pub image_size: u32,
    pub seed: u64,
    /// Share of images that show a car instead of a primitive.
    pub vehicle_fraction: f64,
    pub train: TrainConfig,
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig {
            n_images: 2000,
            image_size: 64,
            seed: 1001,
            vehicle_fraction: 0.5,
            train: TrainConfig {
                epochs: 15,
                crop_size: 64,
                batch_size: 8,
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<(), CamError> {
        if self.n_images < 1 || self.image_size < 64 {
            return Err(CamError::InvalidConfig(
                "pretext corpus needs at least one image of side >= 64".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.vehicle_fraction) {
            return Err(CamError::InvalidConfig("vehicle_fraction must lie in [0, 1]".into()));
        }
        self.train.validate()
    }
}

fn shape_contains(class: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    let m = u.abs().max(v.abs());
    match class {
        0 => r <= 1.0,
        1 => (0.55..=1.0).contains(&r),
        2 => m <= 0.85,
        3 => (0.5..=0.85).contains(&m),
        4 => (-0.85..=0.85).contains(&v) && u.abs() <= (v + 0.85) / 1.7,
        5 => u.abs() <= 1.0 && v.abs() <= 0.3,
        6 => u.abs() <= 0.3 && v.abs() <= 1.0,
        _ => (u.abs() <= 1.0 && v.abs() <= 0.25) || (u.abs() <= 0.25 && v.abs() <= 1.0),
    }
}

/// Class names, primitives first.
pub fn pretext_vocab() -> Vec<String> {
    SHAPE_CLASSES
        .iter()
        .chain(&VEHICLE_CLASSES)
        .map(|s| s.to_string())
        .collect()
}

/// Image `index` of the pretext corpus and its class index in [`pretext_vocab`].
pub fn render_pretext_sample(cfg: &PretextConfig, index: usize) -> (RgbImage, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let size = cfg.image_size as usize;
    let s = size as f64;

    if rng.random_bool(cfg.vehicle_fraction) {
        // large, roughly centred cars, as in object-centric photo collections
        let synth = SynthConfig {
            image_size: cfg.image_size,
            seed: cfg.seed ^ 0x5eed,
            car_width: (0.5, 0.72),
            position_jitter: 0.35,
            ..SynthConfig::default()
        };
        let sample = render_sample(&synth, index, Split::Train);
        return (sample.image, SHAPE_CLASSES.len() + family_of(&sample.record.make));
    }

    let class = rng.random_range(0..SHAPE_CLASSES.len());
    let r = s * rng.random_range(0.12..0.3);
    let cx = rng.random_range(r..s - r);
    let cy = rng.random_range(r..s - r);
    let fg = hsv_to_rgb(
        rng.random_range(0.0..1.0),
        rng.random_range(0.3..0.9),
        rng.random_range(0.1..0.95),
    );
    let tint = hsv_to_rgb(rng.random_range(0.0..1.0), 0.12, rng.random_range(0.4..0.7));
    let mut image = RgbImage::from_pixel(cfg.image_size, cfg.image_size, to_px(tint));

    for _ in 0..2 {
        let br = s * rng.random_range(0.04..0.08);
        let (bx, by) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let c = hsv_to_rgb(
            rng.random_range(0.0..1.0),
            rng.random_range(0.3..0.9),
            rng.random_range(0.3..0.95),
        );
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - bx, y as f64 + 0.5 - by);
                if dx * dx + dy * dy <= br * br {
                    image.put_pixel(x as u32, y as u32, to_px(c));
                }
            }
        }
    }
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5 - cx) / r;
            let v = (y as f64 + 0.5 - cy) / r;
            if shape_contains(class, u, v) {
                image.put_pixel(x as u32, y as u32, to_px(fg));
            }
        }
    }
    for px in image.pixels_mut() {
        for c in 0..3 {
            let v = px[c] as f64 / 255.0 + rng.random_range(-0.15..=0.15);
            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    (image, class)
}

fn family_of(make: &str) -> usize {
    make.trim_start_matches("make").parse::<usize>().unwrap_or(0) % VEHICLE_CLASSES.len()
}

/// The whole corpus in memory, every image in the train split.
pub fn pretext_corpus(cfg: &PretextConfig) -> Result<(DatasetManifest, LabelAssignment, MemoryImages), CamError> {
    let mut records = Vec::with_capacity(cfg.n_images);
    let mut images = HashMap::with_capacity(cfg.n_images);
    let mut mapping = BTreeMap::new();
    let vocab = pretext_vocab();
    let whole =
        BBox::whole_image(cfg.image_size, cfg.image_size).map_err(|e| CamError::InvalidConfig(e.to_string()))?;
    for i in 0..cfg.n_images {
        let (img, class) = render_pretext_sample(cfg, i);
        let id = format!("pretext_{i:05}");
        let name = vocab[class].clone();
        records.push(ManifestRecord {
            id: id.clone(),
            path: String::new(),
            width: cfg.image_size,
            height: cfg.image_size,
            make: name.clone(),
            model: name.clone(),
            year: name,
            bbox: whole,
            split: Split::Train,
        });
        mapping.insert(id.clone(), class);
        images.insert(id, img);
    }
    let manifest = DatasetManifest::from_records(records).map_err(|e| CamError::InvalidConfig(e.to_string()))?;
    let labels = LabelAssignment {
        space_name: "pretext".into(),
        kind: LabelKind::Human,
        vocab,
        mapping,
    };
    Ok((manifest, labels, MemoryImages(images)))
}

/// Trains every stage of `tiny:<cfg.seed>` on the pretext corpus.
pub fn pretrain_backbone(cfg: &PretextConfig) -> Result<Backbone, CamError> {
    cfg.validate()?;
    let (manifest, labels, images) = pretext_corpus(cfg)?;
    let mut spec = CamModelSpec::new(&format!("tiny:{}", cfg.seed), labels.vocab.len());
    spec.frozen_stages.clear();
    let weights = train(&manifest, &labels, &spec, &cfg.train, &images)?;
    Ok(weights.backbone)
}
