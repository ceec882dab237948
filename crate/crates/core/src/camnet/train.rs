use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::layers;
use super::preprocess::preprocess_train;
use super::{CamError, CamModelSpec, ImageSource, TrainConfig};
use crate::ingest::{DatasetManifest, Split};
use crate::labeling::LabelAssignment;

/// Provenance recorded alongside trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub label_space: String,
    pub vocab: Vec<String>,
    pub epochs: usize,
    pub seed: u64,
    pub crop_size: usize,
    /// Training-set classification accuracy after each epoch.
    pub epoch_accuracy: Vec<f64>,
    pub epoch_loss: Vec<f64>,
}

/// A trained CAM network: backbone, linear head over pooled features, metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CamWeights {
    pub spec: CamModelSpec,
    pub backbone: Backbone,
    /// `(num_classes, channels)`.
    pub classifier: Array2<f32>,
    pub bias: Array1<f32>,
    pub meta: TrainMeta,
}

impl CamWeights {
    pub fn num_classes(&self) -> usize {
        self.classifier.nrows()
    }
}

/// splitmix64 finaliser, used to derive independent per-sample seeds.
pub(crate) fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix_seed(mix_seed(mix_seed(seed) ^ epoch as u64) ^ index as u64)
}

struct Momentum {
    weight: Array2<f32>,
    bias: Array1<f32>,
}

fn sgd_step(
    param: &mut Array2<f32>,
    bias: &mut Array1<f32>,
    gw: &Array2<f32>,
    gb: &Array1<f32>,
    buf: &mut Momentum,
    cfg: &TrainConfig,
) {
    let (lr, mu, wd) = (cfg.learning_rate as f32, cfg.momentum as f32, cfg.weight_decay as f32);
    ndarray::Zip::from(&mut buf.weight)
        .and(&*param)
        .and(gw)
        .for_each(|v, &p, &g| *v = mu * *v + g + wd * p);
    ndarray::Zip::from(&mut buf.bias)
        .and(gb)
        .for_each(|v, &g| *v = mu * *v + g);
    param.scaled_add(-lr, &buf.weight);
    bias.scaled_add(-lr, &buf.bias);
}

/// Trains the CAM network as a plain classifier on the train split.
///
/// Frozen stages are never written; every other stage and the linear head are
/// updated by SGD with momentum on the softmax cross-entropy of
/// `W . GAP(features) + b`.
pub fn train(
    manifest: &DatasetManifest,
    labels: &LabelAssignment,
    spec: &CamModelSpec,
    cfg: &TrainConfig,
    images: &dyn ImageSource,
) -> Result<CamWeights, CamError> {
    spec.validate()?;
    cfg.validate()?;
    if spec.num_classes != labels.vocab.len() {
        return Err(CamError::LabelMismatch(format!(
            "model has {} classes but label space {:?} has {}",
            spec.num_classes,
            labels.space_name,
            labels.vocab.len()
        )));
    }
    let train_ids = manifest.ids_in(Split::Train);
    if train_ids.is_empty() {
        return Err(CamError::LabelMismatch("no training images".into()));
    }
    let mut targets = Vec::with_capacity(train_ids.len());
    for id in &train_ids {
        match labels.mapping.get(*id) {
            Some(&l) if l < spec.num_classes => targets.push(l),
            Some(&l) => {
                return Err(CamError::LabelMismatch(format!(
                    "image {id} has label {l} outside {} classes",
                    spec.num_classes
                )))
            }
            None => {
                return Err(CamError::LabelMismatch(format!(
                    "image {id} has no label in space {:?}",
                    labels.space_name
                )))
            }
        }
    }

    let mut backbone = Backbone::from_identifier(&spec.backbone)?.truncated(spec.truncate_after)?;
    let n_stages = backbone.stages.len();
    let channels = backbone.out_channels();
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0xC1A5));
    let mut classifier = Array2::from_shape_fn((spec.num_classes, channels), |_| init_rng.random_range(-0.01f32..0.01));
    let mut bias = Array1::<f32>::zeros(spec.num_classes);

    let first_trainable = (0..n_stages).find(|&i| !spec.is_frozen(i)).unwrap_or(n_stages);
    let mut stage_momentum: Vec<Momentum> = backbone
        .stages
        .iter()
        .map(|s| Momentum {
            weight: Array2::zeros(s.conv.weight.raw_dim()),
            bias: Array1::zeros(s.conv.bias.raw_dim()),
        })
        .collect();
    let mut head_momentum = Momentum {
        weight: Array2::zeros(classifier.raw_dim()),
        bias: Array1::zeros(bias.raw_dim()),
    };

    let mut meta = TrainMeta {
        label_space: labels.space_name.clone(),
        vocab: labels.vocab.clone(),
        epochs: cfg.epochs,
        seed: cfg.seed,
        crop_size: cfg.crop_size,
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
        epoch_loss: Vec::with_capacity(cfg.epochs),
    };

    let mut order: Vec<usize> = (0..train_ids.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, usize::MAX));
        order.shuffle(&mut shuffle_rng);
        let (mut correct, mut loss_sum) = (0usize, 0.0f64);
        for batch in order.chunks(cfg.batch_size) {
            let views: Vec<Array3<f32>> = batch
                .par_iter()
                .map(|&i| {
                    let img = images.load(manifest.image(train_ids[i]).expect("train id comes from manifest"))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                    Ok(preprocess_train(&img, cfg.crop_size, &mut rng))
                })
                .collect::<Result<_, CamError>>()?;
            let x = stack_batch(&views);
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();

            let (feat, caches) = backbone.forward_cached(&x, first_trainable);
            let pooled = layers::global_average_pool(&feat);
            let mut logits = classifier.dot(&pooled);
            for (mut col, &b) in logits.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                col.mapv_inplace(|v| v + b);
            }
            let (loss, dlogits, preds) = layers::softmax_cross_entropy(&logits, &batch_targets);
            loss_sum += loss * batch.len() as f64;
            correct += preds.iter().zip(&batch_targets).filter(|(p, t)| p == t).count();

            let g_head = dlogits.dot(&pooled.t());
            let g_bias = dlogits.sum_axis(Axis(1));
            if first_trainable < n_stages {
                let dpooled = classifier.t().dot(&dlogits);
                let (c, b, h, w) = feat.dim();
                let inv = 1.0 / (h * w) as f32;
                let dfeat = Array4::from_shape_fn((c, b, h, w), |(ci, bi, _, _)| dpooled[[ci, bi]] * inv);
                let grads = backbone.backward(caches, dfeat);
                for (k, g) in grads.into_iter().enumerate() {
                    let i = first_trainable + k;
                    if spec.is_frozen(i) {
                        continue;
                    }
                    let stage = &mut backbone.stages[i];
                    sgd_step(
                        &mut stage.conv.weight,
                        &mut stage.conv.bias,
                        &g.weight,
                        &g.bias,
                        &mut stage_momentum[i],
                        cfg,
                    );
                }
            }
            sgd_step(&mut classifier, &mut bias, &g_head, &g_bias, &mut head_momentum, cfg);
        }
        let n = train_ids.len() as f64;
        let acc = correct as f64 / n;
        log::info!(
            "[{}] epoch {}/{}: loss {:.4}, train accuracy {:.4}",
            labels.space_name,
            epoch + 1,
            cfg.epochs,
            loss_sum / n,
            acc
        );
        meta.epoch_accuracy.push(acc);
        meta.epoch_loss.push(loss_sum / n);
    }

    Ok(CamWeights {
        spec: spec.clone(),
        backbone,
        classifier,
        bias,
        meta,
    })
}

/// Stacks `(3, H, W)` views into a `(3, B, H, W)` batch.
pub(crate) fn stack_batch(views: &[Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = views[0].dim();
    let mut x = Array4::zeros((c, views.len(), h, w));
    for (b, v) in views.iter().enumerate() {
        x.index_axis_mut(Axis(1), b).assign(v);
    }
    x
}
