//! Desk-scale stand-in dataset: one stylised car per image whose label triple
//! drives its appearance.
//!
//! * make  -> shape family (body profile, cabin style, cabin placement)
//! * make  -> also the tint of the glass
//! * model -> variant of the family (proportions, cabin height, door seams,
//!   hub caps)
//! * year  -> hue band of the paint
//!
//! The ground-truth box is the tight extent of the rendered car mask.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, IngestError, ManifestRecord, Split};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub image_size: u32,
    pub n_makes: usize,
    pub models_per_make: usize,
    pub n_years: usize,
    pub seed: u64,
    /// Amplitude of per-pixel background noise, in `[0, 1]`.
    pub background_noise: f64,
    /// Number of distractor blobs scattered over the background.
    #[serde(default)]
    pub distractors: usize,
    /// Range of car body width as a fraction of the image side.
    #[serde(default = "default_car_width")]
    pub car_width: (f64, f64),
    /// How far the car centre may wander from the image centre, as a fraction
    /// of the free space on each side, in `[0, 1]`.
    #[serde(default = "default_jitter")]
    pub position_jitter: f64,
}

fn default_car_width() -> (f64, f64) {
    (0.5, 0.72)
}

fn default_jitter() -> f64 {
    0.35
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 600,
            image_size: 64,
            n_makes: 4,
            models_per_make: 3,
            n_years: 4,
            seed: 7,
            background_noise: 0.3,
            distractors: 3,
            car_width: default_car_width(),
            position_jitter: default_jitter(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if self.n_images < 1 || self.n_makes < 1 || self.models_per_make < 1 || self.n_years < 1 {
            return bad("all counts must be at least 1");
        }
        if self.image_size < 64 {
            return bad("image_size must be at least 64");
        }
        if !(0.0..=1.0).contains(&self.background_noise) {
            return bad("background_noise must lie in [0, 1]");
        }
        let (lo, hi) = self.car_width;
        if !(lo > 0.0 && lo <= hi && hi <= 0.9) {
            return bad("car_width must satisfy 0 < min <= max <= 0.9");
        }
        if !(0.0..=1.0).contains(&self.position_jitter) {
            return bad("position_jitter must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.n_makes * self.models_per_make
    }
}

/// One rendered image with its foreground mask and manifest record.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: RgbImage,
    /// Row-major car mask, `image_size^2` entries.
    pub mask: Vec<bool>,
    pub record: ManifestRecord,
}

/// Body proportions of one (make, model) pair.
#[derive(Debug, Clone, Copy)]
struct CarShape {
    /// Body height / body width.
    body_aspect: f64,
    /// 0 = sharp box, 1 = fully elliptical ends.
    body_round: f64,
    /// Cabin width as a fraction of body width.
    cabin_width: f64,
    /// Cabin height / body height.
    cabin_height: f64,
    /// Horizontal cabin centre offset, fraction of body width (negative = front).
    cabin_offset: f64,
    /// Roof narrowing: 0 = rectangle, 1 = roof pinches to a point.
    cabin_slant: f64,
    /// Wheel radius / body height.
    wheel_radius: f64,
    /// Fractional distance of wheels from the body ends.
    wheel_inset: f64,
    /// Number of dark door seams across the body.
    doors: usize,
}

/// Hub cap colour per model variant.
const HUB_COLORS: [[f64; 3]; 3] = [[0.8, 0.8, 0.82], [0.85, 0.65, 0.2], [0.75, 0.15, 0.15]];

/// Shared by every family so that no class is told apart by its wheels alone.
const WHEEL_RADIUS: f64 = 0.38;

fn family_shape(make: usize) -> CarShape {
    // Four base families; further makes reuse one with a deterministic twist.
    let base = match make % 4 {
        // saloon: long low body, centred sloped cabin
        0 => CarShape {
            body_aspect: 0.28,
            body_round: 0.2,
            cabin_width: 0.55,
            cabin_height: 0.9,
            cabin_offset: 0.0,
            cabin_slant: 0.45,
            wheel_radius: WHEEL_RADIUS,
            wheel_inset: 0.2,
            doors: 1,
        },
        // rounded compact: elliptical body, tall domed cabin
        1 => CarShape {
            body_aspect: 0.42,
            body_round: 1.0,
            cabin_width: 0.6,
            cabin_height: 0.75,
            cabin_offset: 0.05,
            cabin_slant: 0.7,
            wheel_radius: WHEEL_RADIUS,
            wheel_inset: 0.22,
            doors: 1,
        },
        // van: tall box, cabin covers almost the whole roof
        2 => CarShape {
            body_aspect: 0.55,
            body_round: 0.05,
            cabin_width: 0.9,
            cabin_height: 0.55,
            cabin_offset: 0.03,
            cabin_slant: 0.05,
            wheel_radius: WHEEL_RADIUS,
            wheel_inset: 0.15,
            doors: 1,
        },
        // pickup: cabin pushed to the front, open bed behind
        _ => CarShape {
            body_aspect: 0.33,
            body_round: 0.1,
            cabin_width: 0.35,
            cabin_height: 0.95,
            cabin_offset: -0.25,
            cabin_slant: 0.2,
            wheel_radius: WHEEL_RADIUS,
            wheel_inset: 0.17,
            doors: 1,
        },
    };
    let twist = (make / 4) as f64;
    CarShape {
        body_aspect: base.body_aspect * (1.0 + 0.12 * twist),
        cabin_offset: base.cabin_offset + 0.05 * twist,
        ..base
    }
}

fn model_shape(make: usize, model: usize) -> CarShape {
    let f = family_shape(make);
    // Spread variants symmetrically around the family prototype.
    let v = model as f64 - 1.0;
    CarShape {
        body_aspect: f.body_aspect * (1.0 + 0.14 * v),
        cabin_width: (f.cabin_width * (1.0 + 0.15 * v)).clamp(0.2, 0.95),
        cabin_slant: (f.cabin_slant + 0.15 * v).clamp(0.0, 0.9),
        cabin_height: f.cabin_height * (1.0 + 0.2 * v),
        doors: model + 1,
        ..f
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub(crate) fn to_px(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// Which part of the car covers a point, if any.
#[derive(Clone, Copy, PartialEq)]
enum Part {
    Body,
    Seam,
    Cabin,
    Wheel,
    Hub,
}

struct Placement {
    cx: f64,
    body_top: f64,
    body_w: f64,
    body_h: f64,
    mirrored: bool,
    shape: CarShape,
}

impl Placement {
    /// Seams split the body into `doors + 1` equal panels above the wheel line.
    fn body_or_seam(&self, lx: f64, y: f64) -> Part {
        let n = self.shape.doors;
        let half = (0.03 * self.body_w).max(0.6);
        let above_wheels = y < self.body_top + 0.8 * self.body_h;
        let on_seam = (1..=n).any(|i| {
            let sx = -self.body_w / 2.0 + self.body_w * i as f64 / (n + 1) as f64;
            (lx - sx).abs() <= half
        });
        if above_wheels && on_seam {
            Part::Seam
        } else {
            Part::Body
        }
    }

    fn part_at(&self, x: f64, y: f64) -> Option<Part> {
        let s = &self.shape;
        let bw2 = self.body_w / 2.0;
        let lx = if self.mirrored { self.cx - x } else { x - self.cx };
        // wheels sit on the bottom edge of the body
        let r = s.wheel_radius * self.body_h;
        let wy = self.body_top + self.body_h;
        for wx in [-bw2 * (1.0 - 2.0 * s.wheel_inset), bw2 * (1.0 - 2.0 * s.wheel_inset)] {
            let d2 = (lx - wx).powi(2) + (y - wy).powi(2);
            if d2 <= r * r {
                return Some(if d2 <= 0.25 * r * r { Part::Hub } else { Part::Wheel });
            }
        }
        // body: rectangle with elliptical end caps of width `round * height`
        if y >= self.body_top && y <= self.body_top + self.body_h && lx.abs() <= bw2 {
            let cap = s.body_round * self.body_h * 0.5;
            let inner = bw2 - cap;
            if lx.abs() <= inner || cap <= 0.0 {
                return Some(self.body_or_seam(lx, y));
            }
            let dx = (lx.abs() - inner) / cap;
            let dy = (y - (self.body_top + self.body_h / 2.0)) / (self.body_h / 2.0);
            if dx * dx + dy * dy <= 1.0 {
                return Some(Part::Body);
            }
        }
        // cabin: trapezoid on top of the body
        let ch = s.cabin_height * self.body_h;
        let cy0 = self.body_top - ch;
        if y >= cy0 && y < self.body_top {
            let t = (self.body_top - y) / ch; // 0 at base, 1 at roof
            let half = s.cabin_width * bw2 * (1.0 - s.cabin_slant * t);
            let ccx = s.cabin_offset * self.body_w;
            if (lx - ccx).abs() <= half {
                return Some(Part::Cabin);
            }
        }
        None
    }
}

fn label_names(make: usize, model: usize, year: usize) -> (String, String, String) {
    (
        format!("make{make:02}"),
        format!("make{make:02}-model{model}"),
        format!("{}", 2005 + year),
    )
}

/// Renders image `index` of the dataset described by `cfg`. Each image draws from
/// its own ChaCha stream, so samples can be rendered independently.
pub fn render_sample(cfg: &SynthConfig, index: usize, split: Split) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let size = cfg.image_size as usize;
    let s = size as f64;

    let make = rng.random_range(0..cfg.n_makes);
    let model = rng.random_range(0..cfg.models_per_make);
    let year = rng.random_range(0..cfg.n_years);
    let shape = model_shape(make, model);

    // Vertical extent of the whole car relative to body height.
    let above = shape.cabin_height;
    let below = shape.wheel_radius;
    let mut body_w = s * rng.random_range(cfg.car_width.0..=cfg.car_width.1);
    let total_h = |bw: f64| bw * shape.body_aspect * (1.0 + above + below);
    if total_h(body_w) > 0.8 * s {
        body_w *= 0.8 * s / total_h(body_w);
    }
    let body_h = body_w * shape.body_aspect;
    let car_h = body_h * (1.0 + above + below);
    let margin = 2.0;
    let span_x = (s - body_w - 2.0 * margin).max(0.0);
    let span_y = (s - car_h - 2.0 * margin).max(0.0);
    let jitter = cfg.position_jitter;
    let cx = s / 2.0 + rng.random_range(-jitter..=jitter) * span_x / 2.0;
    let top = (s - car_h) / 2.0 + rng.random_range(-jitter..=jitter) * span_y / 2.0;
    let place = Placement {
        cx,
        body_top: top + above * body_h,
        body_w,
        body_h,
        mirrored: rng.random_bool(0.5),
        shape,
    };

    let hue = (year as f64 + rng.random_range(0.15..0.85)) / cfg.n_years as f64;
    let paint = hsv_to_rgb(hue, rng.random_range(0.65..0.9), rng.random_range(0.75..0.95));
    let glass = hsv_to_rgb(0.58 + 0.25 * (make % 4) as f64, 0.4, rng.random_range(0.3..0.45));
    let seam = paint.map(|c| c * 0.35);
    let tyre = [0.08, 0.08, 0.09];
    let hub = HUB_COLORS[model % HUB_COLORS.len()];

    let grey = rng.random_range(0.4..0.7);
    let tint = hsv_to_rgb(rng.random_range(0.0..1.0), 0.12, grey);

    let mut image = RgbImage::from_pixel(cfg.image_size, cfg.image_size, to_px(tint));
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            if let Some(part) = place.part_at(x as f64 + 0.5, y as f64 + 0.5) {
                mask[y * size + x] = true;
                let c = match part {
                    Part::Body => paint,
                    Part::Seam => seam,
                    Part::Cabin => glass,
                    Part::Wheel => tyre,
                    Part::Hub => hub,
                };
                image.put_pixel(x as u32, y as u32, to_px(c));
            }
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..size {
        for x in 0..size {
            if mask[y * size + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let bbox = BBox::from_inclusive(x0 as u32, y0 as u32, x1 as u32, y1 as u32).expect("car glyph is never empty");

    // Distractors avoid the car box (plus a small margin). Some are loose car
    // parts (a tyre, a seamed paint panel), so part detectors also fire off
    // the car.
    for _ in 0..cfg.distractors {
        let kind = rng.random_range(0..3);
        let mut r = s * rng.random_range(0.05..0.1);
        let mut color = hsv_to_rgb(
            rng.random_range(0.0..1.0),
            rng.random_range(0.3..0.9),
            rng.random_range(0.3..0.95),
        );
        let mut elongation = rng.random_range(0.6..1.6);
        match kind {
            1 => {
                r = shape.wheel_radius * body_h;
                color = tyre;
                elongation = 1.0;
            }
            2 => elongation = 1.6,
            _ => {}
        }
        let mut placed = None;
        for _ in 0..20 {
            let bx = rng.random_range(0.0..s);
            let by = rng.random_range(0.0..s);
            let (rx, ry) = (r * elongation, r / elongation);
            let clear = bx + rx + 2.0 < bbox.x() as f64
                || bx - rx - 2.0 > bbox.right() as f64
                || by + ry + 2.0 < bbox.y() as f64
                || by - ry - 2.0 > bbox.bottom() as f64;
            if clear {
                placed = Some((bx, by, rx, ry));
                break;
            }
        }
        if let Some((bx, by, rx, ry)) = placed {
            let seam_half = (0.03 * body_w).max(0.6);
            for y in 0..size {
                for x in 0..size {
                    let dx = (x as f64 + 0.5 - bx) / rx;
                    let dy = (y as f64 + 0.5 - by) / ry;
                    let inside = if kind == 2 {
                        dx.abs() <= 1.0 && dy.abs() <= 1.0
                    } else {
                        dx * dx + dy * dy <= 1.0
                    };
                    if inside && !mask[y * size + x] {
                        let c = if kind == 2 && (dx * rx).abs() <= seam_half {
                            color.map(|v| v * 0.35)
                        } else {
                            color
                        };
                        image.put_pixel(x as u32, y as u32, to_px(c));
                    }
                }
            }
        }
    }

    if cfg.background_noise > 0.0 {
        let amp = cfg.background_noise * 0.5;
        for y in 0..size {
            for x in 0..size {
                if mask[y * size + x] {
                    continue;
                }
                let px = image.get_pixel_mut(x as u32, y as u32);
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0 + rng.random_range(-amp..=amp);
                    px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }

    let id = format!("synth_{index:05}");
    let (make_name, model_name, year_name) = label_names(make, model, year);
    SynthSample {
        image,
        mask,
        record: ManifestRecord {
            path: format!("images/{id}.png"),
            id,
            width: cfg.image_size,
            height: cfg.image_size,
            make: make_name,
            model: model_name,
            year: year_name,
            bbox,
            split,
        },
    }
}

/// Deterministic 70/30 split: a seeded shuffle puts the first `round(0.7 n)` in train.
fn split_plan(cfg: &SynthConfig) -> Vec<Split> {
    let mut order: Vec<usize> = (0..cfg.n_images).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = (cfg.n_images as f64 * 0.7).round() as usize;
    let mut plan = vec![Split::Test; cfg.n_images];
    for &i in &order[..n_train] {
        plan[i] = Split::Train;
    }
    plan
}

/// Renders every sample in memory without touching the filesystem.
pub fn synth_records(cfg: &SynthConfig) -> Result<Vec<SynthSample>, IngestError> {
    cfg.validate()?;
    use rayon::prelude::*;
    let plan = split_plan(cfg);
    Ok((0..cfg.n_images)
        .into_par_iter()
        .map(|i| render_sample(cfg, i, plan[i]))
        .collect())
}

/// Renders the dataset into `out_dir/images/` and returns its manifest. Image
/// paths are relative to `out_dir`, so save the manifest there.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, IngestError> {
    let samples = synth_records(cfg)?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| IngestError::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let p = out_dir.join(&s.record.path);
        s.image.save(&p).map_err(|e| IngestError::Image {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        records.push(s.record);
    }
    DatasetManifest::from_records(records)
}
