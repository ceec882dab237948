//! Static renderings: box overlays and CAM panels.

use image::{GrayImage as LumaImage, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::boxer::GrayImage;
use crate::geometry::BBox;

pub const PRED_COLOR: Rgb<u8> = Rgb([255, 40, 40]);
pub const GT_COLOR: Rgb<u8> = Rgb([40, 220, 40]);
const OUTLINE: u32 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VizError {
    #[error("box {bbox:?} lies outside the {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("panel needs at least one map and one column")]
    EmptyPanel,
}

fn outline(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (x0, y0) = (b.x(), b.y());
    let (x1, y1) = (b.right() as u32, b.bottom() as u32);
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x < x0 + OUTLINE || y < y0 + OUTLINE || x + OUTLINE >= x1 || y + OUTLINE >= y1;
            if edge {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Copy of `image` with a 2-pixel outline just inside `pred`, and inside `gt`
/// in a second colour drawn on top.
pub fn render_overlay(image: &RgbImage, pred: &BBox, gt: Option<&BBox>) -> Result<RgbImage, VizError> {
    let (width, height) = image.dimensions();
    for b in std::iter::once(pred).chain(gt) {
        if !b.fits_within(width, height) {
            return Err(VizError::OutOfBounds {
                bbox: *b,
                width,
                height,
            });
        }
    }
    let mut out = image.clone();
    outline(&mut out, pred, PRED_COLOR);
    if let Some(g) = gt {
        outline(&mut out, g, GT_COLOR);
    }
    Ok(out)
}

/// Row-major grid of maps, `columns` wide. Every cell has the largest map's
/// size; maps sit at their cell's top-left corner and the rest is black.
pub fn render_cam_panel(maps: &[GrayImage], columns: usize) -> Result<LumaImage, VizError> {
    if maps.is_empty() || columns == 0 {
        return Err(VizError::EmptyPanel);
    }
    let cell_h = maps.iter().map(|m| m.values.nrows()).max().unwrap_or(0);
    let cell_w = maps.iter().map(|m| m.values.ncols()).max().unwrap_or(0);
    let cols = columns.min(maps.len());
    let rows = maps.len().div_ceil(columns);
    let mut out = LumaImage::new((cols * cell_w) as u32, (rows * cell_h) as u32);
    for (i, m) in maps.iter().enumerate() {
        let (oy, ox) = ((i / columns) * cell_h, (i % columns) * cell_w);
        for ((y, x), &v) in m.values.indexed_iter() {
            out.put_pixel((ox + x) as u32, (oy + y) as u32, Luma([v]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn gray(h: usize, w: usize, v: u8) -> GrayImage {
        GrayImage {
            values: Array2::from_elem((h, w), v),
        }
    }

    #[test]
    fn overlay_shape_and_border_colour() {
        let img = RgbImage::from_pixel(50, 40, Rgb([0, 0, 255]));
        let pred = BBox::new(5, 6, 20, 10).unwrap();
        let out = render_overlay(&img, &pred, None).unwrap();
        assert_eq!(out.dimensions(), (50, 40));
        for (x, y) in [(5, 6), (24, 6), (5, 15), (24, 15), (6, 7), (15, 6), (23, 14)] {
            assert_eq!(*out.get_pixel(x, y), PRED_COLOR, "({x},{y})");
        }
        // interior and exterior untouched
        assert_eq!(*out.get_pixel(15, 10), Rgb([0, 0, 255]));
        assert_eq!(*out.get_pixel(4, 6), Rgb([0, 0, 255]));
    }

    #[test]
    fn ground_truth_drawn_last() {
        let img = RgbImage::new(30, 30);
        let b = BBox::new(2, 2, 10, 10).unwrap();
        let out = render_overlay(&img, &b, Some(&b)).unwrap();
        assert_eq!(*out.get_pixel(2, 2), GT_COLOR);
        assert!(out.pixels().all(|p| *p != PRED_COLOR));
    }

    #[test]
    fn overlay_rejects_outside_box() {
        let img = RgbImage::new(10, 10);
        let b = BBox::new(5, 5, 6, 2).unwrap();
        assert!(matches!(
            render_overlay(&img, &b, None),
            Err(VizError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn panel_layouts() {
        let eight: Vec<_> = (0..8).map(|i| gray(4, 5, i as u8 + 1)).collect();
        let p = render_cam_panel(&eight, 8).unwrap();
        assert_eq!(p.dimensions(), (40, 4));
        assert_eq!(p.get_pixel(39, 3)[0], 8);

        let one = render_cam_panel(&[gray(3, 2, 9)], 4).unwrap();
        assert_eq!(one.dimensions(), (2, 3));

        let five: Vec<_> = (0..5).map(|_| gray(2, 2, 200)).collect();
        let p = render_cam_panel(&five, 2).unwrap();
        assert_eq!(p.dimensions(), (4, 6));
        assert_eq!(p.get_pixel(1, 5)[0], 200);
        assert_eq!(p.get_pixel(3, 5)[0], 0);

        let mixed = render_cam_panel(&[gray(2, 2, 7), gray(4, 3, 9)], 2).unwrap();
        assert_eq!(mixed.dimensions(), (6, 4));
        assert_eq!(mixed.get_pixel(0, 3)[0], 0);
        assert!(render_cam_panel(&[], 2).is_err());
    }
}
