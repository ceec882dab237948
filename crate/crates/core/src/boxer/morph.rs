use ndarray::Array2;

use super::BinaryImage;

/// One separable pass of a square window: OR (dilation) or AND (erosion) over
/// `radius` neighbours each side, with `outside` standing in for off-image pixels.
fn window_pass(src: &Array2<u8>, radius: usize, along_rows: bool, dilate: bool, outside: u8) -> Array2<u8> {
    let (h, w) = src.dim();
    let mut out = Array2::zeros((h, w));
    let r = radius as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = if dilate { 0 } else { 1 };
            for d in -r..=r {
                let (yy, xx) = if along_rows {
                    (y as isize, x as isize + d)
                } else {
                    (y as isize + d, x as isize)
                };
                let v = if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    outside
                } else {
                    src[[yy as usize, xx as usize]]
                };
                if dilate {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Dilation by a `kernel_size` square; pixels beyond the border count as 0.
pub fn dilate(b: &BinaryImage, kernel_size: usize) -> BinaryImage {
    let r = kernel_size / 2;
    let t = window_pass(&b.values, r, true, true, 0);
    BinaryImage {
        values: window_pass(&t, r, false, true, 0),
    }
}

/// Erosion by a `kernel_size` square. Pixels beyond the border count as 1, the
/// adjoint of [`dilate`] on the image domain.
pub fn erode(b: &BinaryImage, kernel_size: usize) -> BinaryImage {
    let r = kernel_size / 2;
    let t = window_pass(&b.values, r, true, false, 1);
    BinaryImage {
        values: window_pass(&t, r, false, false, 1),
    }
}

/// `iterations` dilations followed by as many erosions.
pub fn morph_close(b: &BinaryImage, kernel_size: usize, iterations: usize) -> BinaryImage {
    let mut cur = b.clone();
    for _ in 0..iterations {
        cur = dilate(&cur, kernel_size);
    }
    for _ in 0..iterations {
        cur = erode(&cur, kernel_size);
    }
    cur
}
