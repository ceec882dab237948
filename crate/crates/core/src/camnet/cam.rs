use image::RgbImage;
use ndarray::{Array3, Array4, Axis};

use super::layers::argmax;
use super::preprocess::preprocess_eval;
use super::{CamError, CamWeights, Heatmap};
use crate::raster::{mirror_plane, resize_plane};

/// Class activation map of `class_index` over backbone features `(C, H, W)`:
/// `max(0, sum_k W[class][k] * f[k] + b)` at every location. The bias term is
/// included when the model spec asks for it. The returned map has the feature
/// grid's size and an empty image id.
pub fn cam_map(weights: &CamWeights, features: &Array3<f32>, class_index: usize) -> Result<Heatmap, CamError> {
    let k = weights.num_classes();
    if class_index >= k {
        return Err(CamError::IndexOutOfRange {
            index: class_index,
            num_classes: k,
        });
    }
    let (c, h, w) = features.dim();
    if c != weights.classifier.ncols() {
        return Err(CamError::Format(format!(
            "features have {c} channels, classifier expects {}",
            weights.classifier.ncols()
        )));
    }
    let flat = features
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h * w))
        .expect("feature reshape");
    let row = weights.classifier.row(class_index);
    let b = if weights.spec.cam_bias {
        weights.bias[class_index]
    } else {
        0.0
    };
    let values = row
        .dot(&flat)
        .mapv(|v| (v + b).max(0.0))
        .into_shape_with_order((h, w))
        .expect("map reshape");
    Ok(Heatmap {
        values,
        image_id: String::new(),
        class_index,
        source_size: (h as u32, w as u32),
    })
}

/// Classifier logits `W . GAP(f) + b` for one feature map.
pub fn class_logits(weights: &CamWeights, features: &Array3<f32>) -> Vec<f32> {
    let pooled = features
        .mean_axis(Axis(2))
        .and_then(|m| m.mean_axis(Axis(1)))
        .expect("non-empty feature map");
    let mut logits = weights.classifier.dot(&pooled);
    logits += &weights.bias;
    logits.to_vec()
}

fn features_of(weights: &CamWeights, view: Array3<f32>) -> Array3<f32> {
    let (c, h, w) = view.dim();
    let x: Array4<f32> = view.into_shape_with_order((c, 1, h, w)).expect("batch of one");
    weights.backbone.forward(&x).index_axis_move(Axis(1), 0)
}

/// Full-resolution heatmap for one image.
///
/// The original view and the mirrored half-scale view go through the backbone;
/// the class is the argmax of the original view's logits; the mirrored map is
/// flipped back, both maps are bilinearly upsampled to the image size and summed.
pub fn infer_heatmap(weights: &CamWeights, image: &RgbImage, image_id: &str) -> Result<Heatmap, CamError> {
    let (width, height) = image.dimensions();
    let min_side = 2 * weights.backbone.stride();
    if width < min_side as u32 || height < min_side as u32 {
        return Err(CamError::Image {
            id: image_id.to_string(),
            msg: format!("{width}x{height} is too small for a stride-{} backbone", min_side / 2),
        });
    }
    let (original, flipped) = preprocess_eval(image);
    let f_orig = features_of(weights, original);
    let f_flip = features_of(weights, flipped);
    let class_index = argmax(class_logits(weights, &f_orig).into_iter());
    let m_orig = cam_map(weights, &f_orig, class_index)?.values;
    let m_flip = mirror_plane(&cam_map(weights, &f_flip, class_index)?.values);
    let (h, w) = (height as usize, width as usize);
    let values = resize_plane(m_orig.view(), h, w) + resize_plane(m_flip.view(), h, w);
    Ok(Heatmap {
        values,
        image_id: image_id.to_string(),
        class_index,
        source_size: (height, width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camnet::{Backbone, CamModelSpec, TrainMeta};
    use image::Rgb;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights_with(backbone: Backbone, classifier: Array2<f32>, bias: Array1<f32>) -> CamWeights {
        CamWeights {
            spec: CamModelSpec::new(&backbone.id, classifier.nrows()),
            backbone,
            classifier,
            bias,
            meta: TrainMeta {
                label_space: "t".into(),
                vocab: vec![],
                epochs: 0,
                seed: 0,
                crop_size: 64,
                epoch_accuracy: vec![],
                epoch_loss: vec![],
            },
        }
    }

    fn tiny() -> Backbone {
        Backbone::from_identifier("tiny:5").unwrap()
    }

    #[test]
    fn zero_projection_gives_zero_map() {
        let w = weights_with(tiny(), Array2::zeros((3, 64)), Array1::zeros(3));
        let f = Array3::from_elem((64, 4, 5), 1.5f32);
        let m = cam_map(&w, &f, 2).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.values.dim(), (4, 5));
    }

    #[test]
    fn one_hot_projection_selects_channel() {
        let mut cls = Array2::zeros((2, 64));
        cls[[1, 7]] = 1.0;
        let w = weights_with(tiny(), cls, Array1::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Array3::from_shape_fn((64, 3, 3), |_| rng.random_range(-1.0f32..1.0));
        let m = cam_map(&w, &f, 1).unwrap();
        let want = f.index_axis(Axis(0), 7).mapv(|v| v.max(0.0));
        assert_eq!(m.values, want);
    }

    #[test]
    fn hand_computed_two_channel_map() {
        // 2 channels, 2x2 grid, class 0 weights (0.5, -2), bias 0.25
        let b = Backbone::seeded("t", 0, &[2], &[false]);
        let w = weights_with(b, array![[0.5f32, -2.0], [1.0, 1.0]], array![0.25f32, 0.0]);
        let f = array![[[1.0f32, 2.0], [3.0, -1.0]], [[0.5, 0.1], [2.0, -0.5]]];
        let m = cam_map(&w, &f, 0).unwrap();
        let oracle = |y: usize, x: usize| (0.5 * f[[0, y, x]] - 2.0 * f[[1, y, x]] + 0.25).max(0.0);
        for y in 0..2 {
            for x in 0..2 {
                assert!((m.values[[y, x]] - oracle(y, x)).abs() < 1e-6);
            }
        }
        let mut nb = w.clone();
        nb.spec.cam_bias = false;
        let m = cam_map(&nb, &f, 0).unwrap();
        assert!((m.values[[0, 1]] - (1.0f32 - 0.2).max(0.0)).abs() < 1e-6);
    }

    #[test]
    fn bad_class_index() {
        let w = weights_with(tiny(), Array2::zeros((3, 64)), Array1::zeros(3));
        let f = Array3::zeros((64, 2, 2));
        assert!(matches!(
            cam_map(&w, &f, 3),
            Err(CamError::IndexOutOfRange {
                index: 3,
                num_classes: 3
            })
        ));
    }

    fn random_weights(seed: u64, backbone: Backbone) -> CamWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = backbone.out_channels();
        let cls = Array2::from_shape_fn((4, c), |_| rng.random_range(-1.0f32..1.0));
        let bias = Array1::from_shape_fn(4, |_| rng.random_range(-0.1f32..0.1));
        weights_with(backbone, cls, bias)
    }

    #[test]
    fn heatmap_shape_matches_image() {
        let w = random_weights(1, tiny());
        let img = RgbImage::from_fn(80, 60, |x, y| Rgb([(x * 3) as u8, (y * 4) as u8, 90]));
        let h = infer_heatmap(&w, &img, "a").unwrap();
        assert_eq!(h.values.dim(), (60, 80));
        assert_eq!(h.source_size, (60, 80));
        assert!(h.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn chosen_class_is_logit_argmax() {
        let w = random_weights(2, tiny());
        let img = RgbImage::from_fn(64, 48, |x, y| Rgb([(x * 3) as u8, (y * 5) as u8, (x ^ y) as u8]));
        let h = infer_heatmap(&w, &img, "a").unwrap();
        let (orig, _) = preprocess_eval(&img);
        let logits = class_logits(&w, &features_of(&w, orig));
        assert_eq!(h.class_index, argmax(logits.into_iter()));
    }

    #[test]
    fn zero_flipped_branch_leaves_upsampled_original() {
        // With a bias-free map whose class weights only see a channel that is
        // dead on the half-scale view, the sum reduces to the original branch.
        let w = random_weights(3, tiny());
        let img = RgbImage::from_fn(64, 64, |x, y| Rgb([(x * 4) as u8, (y * 4) as u8, 10]));
        let (orig, flip) = preprocess_eval(&img);
        let f_orig = features_of(&w, orig);
        let f_flip = features_of(&w, flip);
        let class = argmax(class_logits(&w, &f_orig).into_iter());
        let m_orig = cam_map(&w, &f_orig, class).unwrap().values;
        let m_flip = cam_map(&w, &f_flip, class).unwrap().values;
        let h = infer_heatmap(&w, &img, "a").unwrap();
        let expected = resize_plane(m_orig.view(), 64, 64) + resize_plane(mirror_plane(&m_flip).view(), 64, 64);
        for (a, b) in h.values.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        if m_flip.iter().all(|&v| v == 0.0) {
            let up = resize_plane(m_orig.view(), 64, 64);
            assert_eq!(h.values, up);
        }
    }

    /// Backbone whose every kernel is left-right symmetric, hence flip-equivariant.
    pub(crate) fn mirror_symmetric_backbone(seed: u64) -> Backbone {
        let mut b = Backbone::from_identifier(&format!("tiny:{seed}")).unwrap();
        for s in &mut b.stages {
            let w = &mut s.conv.weight;
            for o in 0..w.nrows() {
                for ci in 0..w.ncols() / 9 {
                    for ky in 0..3 {
                        let l = w[[o, ci * 9 + ky * 3]];
                        w[[o, ci * 9 + ky * 3 + 2]] = l;
                    }
                }
            }
        }
        b
    }

    #[test]
    fn symmetric_image_gives_symmetric_heatmap() {
        let w = random_weights(4, mirror_symmetric_backbone(6));
        let img = RgbImage::from_fn(64, 48, |x, y| {
            let m = x.min(63 - x);
            Rgb([(m * 8) as u8, (y * 5) as u8, ((m * y) % 251) as u8])
        });
        let h = infer_heatmap(&w, &img, "sym").unwrap();
        let mirrored = mirror_plane(&h.values);
        let scale = h.values.iter().cloned().fold(1.0f32, f32::max);
        for (a, b) in h.values.iter().zip(mirrored.iter()) {
            assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
        }
    }
}
