//! Axis-aligned integer boxes and exact overlap arithmetic.
//!
//! Boxes use the half-open pixel convention: a box `(x, y, w, h)` covers the
//! pixel columns `x..x + w` and rows `y..y + h`, so `area = w * h` is exactly
//! the number of covered raster pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("box extent must be positive, got w={w} h={h}")]
    NonPositiveExtent { w: i64, h: i64 },
    #[error("box origin must be non-negative, got x={x} y={y}")]
    NegativeOrigin { x: i64, y: i64 },
    #[error("image size must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

impl TryFrom<RawBox> for BBox {
    type Error = GeometryError;

    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        make_bbox(r.x, r.y, r.w, r.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            x: b.x as i64,
            y: b.y as i64,
            w: b.w as i64,
            h: b.h as i64,
        }
    }
}

/// Validates and builds a box.
pub fn make_bbox(x: i64, y: i64, w: i64, h: i64) -> Result<BBox, GeometryError> {
    if w < 1 || h < 1 {
        return Err(GeometryError::NonPositiveExtent { w, h });
    }
    if x < 0 || y < 0 {
        return Err(GeometryError::NegativeOrigin { x, y });
    }
    let fits = |v: i64| u32::try_from(v).is_ok();
    if !(fits(x) && fits(y) && fits(w) && fits(h) && fits(x + w) && fits(y + h)) {
        // Coordinates beyond u32 cannot come from any raster.
        return Err(GeometryError::NonPositiveExtent { w, h });
    }
    Ok(BBox {
        x: x as u32,
        y: y as u32,
        w: w as u32,
        h: h as u32,
    })
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self, GeometryError> {
        make_bbox(x, y, w, h)
    }

    /// The box covering an entire `width` x `height` image.
    pub fn whole_image(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage { width, height });
        }
        Ok(BBox {
            x: 0,
            y: 0,
            w: width,
            h: height,
        })
    }

    /// Box spanning the inclusive pixel range `[x0, x1] x [y0, y1]`.
    pub fn from_inclusive(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, GeometryError> {
        make_bbox(
            x0 as i64,
            y0 as i64,
            x1 as i64 - x0 as i64 + 1,
            y1 as i64 - y0 as i64 + 1,
        )
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x && (px as u64) < self.right() && py >= self.y && (py as u64) < self.bottom()
    }

    /// Intersects the box with a `width` x `height` image; `None` when nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let r = self.right().min(width as u64);
        let b = self.bottom().min(height as u64);
        if r <= self.x as u64 || b <= self.y as u64 {
            return None;
        }
        Some(BBox {
            x: self.x,
            y: self.y,
            w: (r - self.x as u64) as u32,
            h: (b - self.y as u64) as u32,
        })
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    /// Translates by a non-negative offset.
    pub fn shifted(&self, dx: u32, dy: u32) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Number of pixels covered by both boxes.
pub fn bbox_intersection_area(a: &BBox, b: &BBox) -> u64 {
    let ix = a.right().min(b.right()).saturating_sub(a.x.max(b.x) as u64);
    let iy = a.bottom().min(b.bottom()).saturating_sub(a.y.max(b.y) as u64);
    ix * iy
}

/// Intersection over union. Integer arithmetic up to the final division, so
/// identical boxes give exactly 1.0 and disjoint boxes exactly 0.0.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = bbox_intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// An image on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
}
