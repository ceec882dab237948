//! Minimal convolutional layers with hand-written backward passes.
//!
//! Activations are laid out `(C, B, H, W)` so that a convolution over the whole
//! batch is one matrix product against an im2col matrix of shape `(C*9, B*H*W)`.

use ndarray::{Array1, Array2, Array4, Axis};
use normal::standard_normal;
use rand::Rng;

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    /// `(out, in * 9)`, row-major over `(in, ky, kx)`.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv3x3 {
    /// He-normal initialisation.
    pub fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (c_in * 9) as f64).sqrt();
        let weight = Array2::from_shape_fn((c_out, c_in * 9), |_| (standard_normal(rng) * std) as f32);
        Conv3x3 {
            weight,
            bias: Array1::zeros(c_out),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.ncols() / 9
    }

    pub fn c_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Returns the output and the im2col matrix needed for the backward pass.
    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, Array2<f32>) {
        let (_, b, h, w) = x.dim();
        let cols = im2col(x);
        let mut out = self.weight.dot(&cols);
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
        let out = out
            .into_shape_with_order((self.c_out(), b, h, w))
            .expect("conv output reshape");
        (out, cols)
    }

    /// Gradients w.r.t. weight and bias, and optionally w.r.t. the input.
    pub fn backward(
        &self,
        dout: &Array4<f32>,
        cols: &Array2<f32>,
        need_input_grad: bool,
    ) -> (Array2<f32>, Array1<f32>, Option<Array4<f32>>) {
        let (c_out, b, h, w) = dout.dim();
        let d2 = dout
            .view()
            .into_shape_with_order((c_out, b * h * w))
            .expect("standard layout gradient");
        let dw = d2.dot(&cols.t());
        let db = d2.sum_axis(Axis(1));
        let dx = need_input_grad.then(|| {
            let dcols = self.weight.t().dot(&d2);
            col2im(&dcols, self.c_in(), b, h, w)
        });
        (dw, db, dx)
    }
}

pub fn im2col(x: &Array4<f32>) -> Array2<f32> {
    let (c, b, h, w) = x.dim();
    let n = b * h * w;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::<f32>::zeros((c * 9, n));
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let s = ((ci * b + bi) * h + sy as usize) * w;
                        let d = row + (bi * h + y) * w;
                        match kx {
                            0 => dst[d + 1..d + w].copy_from_slice(&src[s..s + w - 1]),
                            1 => dst[d..d + w].copy_from_slice(&src[s..s + w]),
                            _ => dst[d..d + w - 1].copy_from_slice(&src[s + 1..s + w]),
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im(cols: &Array2<f32>, c: usize, b: usize, h: usize, w: usize) -> Array4<f32> {
    let n = b * h * w;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut x = Array4::<f32>::zeros((c, b, h, w));
    let dst = x.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let d = ((ci * b + bi) * h + sy as usize) * w;
                        let s = row + (bi * h + y) * w;
                        let (dr, sr) = match kx {
                            0 => (&mut dst[d..d + w - 1], &src[s + 1..s + w]),
                            1 => (&mut dst[d..d + w], &src[s..s + w]),
                            _ => (&mut dst[d + 1..d + w], &src[s..s + w - 1]),
                        };
                        for (o, i) in dr.iter_mut().zip(sr) {
                            *o += i;
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn relu_inplace(x: &mut Array4<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the (post-ReLU) activation is not positive.
pub fn relu_backward(dout: &mut Array4<f32>, activated: &Array4<f32>) {
    ndarray::Zip::from(dout).and(activated).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled map and, per output cell, the flat input offset of its maximum.
pub fn maxpool2(x: &Array4<f32>) -> (Array4<f32>, Vec<u32>) {
    let (c, b, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::<f32>::zeros((c, b, oh, ow));
    let mut arg = vec![0u32; c * b * oh * ow];
    let dst = out.as_slice_mut().expect("fresh array");
    for plane in 0..c * b {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                dst[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(dout: &Array4<f32>, arg: &[u32], input_dim: (usize, usize, usize, usize)) -> Array4<f32> {
    let mut dx = Array4::<f32>::zeros(input_dim);
    let dst = dx.as_slice_mut().expect("fresh array");
    let dout = dout.as_standard_layout();
    for (g, &i) in dout.as_slice().expect("standard layout").iter().zip(arg) {
        dst[i as usize] += g;
    }
    dx
}

/// Spatial mean per channel and sample: `(C, B, H, W) -> (C, B)`.
pub fn global_average_pool(x: &Array4<f32>) -> Array2<f32> {
    let (c, b, h, w) = x.dim();
    let hw = (h * w) as f32;
    let mut out = Array2::<f32>::zeros((c, b));
    for ci in 0..c {
        for bi in 0..b {
            let s: f32 = x.slice(ndarray::s![ci, bi, .., ..]).iter().sum();
            out[[ci, bi]] = s / hw;
        }
    }
    out
}

/// Numerically stable softmax cross-entropy over `(K, B)` logits.
/// Returns mean loss, the gradient of that mean w.r.t. the logits, and argmax predictions.
pub fn softmax_cross_entropy(logits: &Array2<f32>, targets: &[usize]) -> (f64, Array2<f32>, Vec<usize>) {
    let (k, b) = logits.dim();
    let mut grad = Array2::<f32>::zeros((k, b));
    let mut loss = 0.0f64;
    let mut preds = Vec::with_capacity(b);
    for (j, &t) in targets.iter().enumerate() {
        let col = logits.column(j);
        let m = col.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = col.iter().map(|&v| ((v - m) as f64).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (col[t] - m) as f64;
        for i in 0..k {
            let p = exps[i] / z;
            grad[[i, j]] = ((p - (i == t) as u8 as f64) / b as f64) as f32;
        }
        preds.push(argmax(col.iter().cloned()));
    }
    (loss / b as f64, grad, preds)
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(it: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Box-Muller standard normal, so layer init needs only `rand`.
mod normal {
    use rand::Rng;

    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
