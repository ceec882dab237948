//! Staged convolutional feature extractor.
//!
//! Each stage is `conv3x3 -> ReLU -> (optional 2x2 max pool)`. Stages are
//! numbered from 1. The built-in `tiny` architecture has four stages of
//! 16/32/64/64 channels with pooling after the first two (output stride 4).

use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv3x3};
use super::CamError;
use crate::tensorfile::{read_tensor_file, write_tensor_file};

pub const TINY_CHANNELS: [usize; 4] = [16, 32, 64, 64];
pub const TINY_POOLS: [bool; 4] = [true, true, false, false];

const BACKBONE_MAGIC: &[u8; 8] = b"CLBKBN01";

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub conv: Conv3x3,
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    /// Identifier this backbone was built from.
    pub id: String,
    pub stages: Vec<Stage>,
}

/// Cached activations of one stage, needed to backpropagate through it.
pub(crate) struct StageCache {
    cols: Array2<f32>,
    activated: Array4<f32>,
    pool_arg: Option<Vec<u32>>,
}

/// Parameter gradients of one stage.
pub(crate) struct StageGrad {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

#[derive(Serialize, Deserialize)]
struct BackboneMeta {
    id: String,
    pools: Vec<bool>,
}

impl Backbone {
    /// Seeded He-initialised network of the given widths.
    pub fn seeded(id: &str, seed: u64, channels: &[usize], pools: &[bool]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = 3;
        let stages = channels
            .iter()
            .zip(pools)
            .map(|(&c, &pool)| {
                let conv = Conv3x3::init(c_in, c, &mut rng);
                c_in = c;
                Stage { conv, pool }
            })
            .collect();
        Backbone {
            id: id.to_string(),
            stages,
        }
    }

    /// Resolves a backbone identifier:
    ///
    /// * `tiny:<seed>` - the built-in four-stage network, seeded initialisation
    /// * `file:<path>` - a backbone saved with [`Backbone::save`]
    pub fn from_identifier(id: &str) -> Result<Self, CamError> {
        if let Some(seed) = id.strip_prefix("tiny:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| CamError::InvalidSpec(format!("bad seed in backbone id {id:?}")))?;
            return Ok(Backbone::seeded(id, seed, &TINY_CHANNELS, &TINY_POOLS));
        }
        if let Some(path) = id.strip_prefix("file:") {
            let mut b = Backbone::load(Path::new(path))?;
            b.id = id.to_string();
            return Ok(b);
        }
        if id == super::PRETEXT_BACKBONE {
            return Err(CamError::InvalidSpec(format!(
                "backbone {id:?} must be pretrained first (pipelines do this themselves)"
            )));
        }
        Err(CamError::InvalidSpec(format!(
            "unknown backbone identifier {id:?} (expected tiny:<seed> or file:<path>)"
        )))
    }

    /// Keeps the first `n` stages.
    pub fn truncated(mut self, n: usize) -> Result<Self, CamError> {
        if n == 0 || n > self.stages.len() {
            return Err(CamError::InvalidSpec(format!(
                "cannot keep {n} stages of a {}-stage backbone",
                self.stages.len()
            )));
        }
        self.stages.truncate(n);
        Ok(self)
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(3, |s| s.conv.c_out())
    }

    /// Total spatial downsampling factor.
    pub fn stride(&self) -> usize {
        1 << self.stages.iter().filter(|s| s.pool).count()
    }

    /// Feature maps `(C, B, h, w)` for a `(3, B, H, W)` input batch.
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut a = x.clone();
        for s in &self.stages {
            let (mut y, _) = s.conv.forward(&a);
            layers::relu_inplace(&mut y);
            a = if s.pool { layers::maxpool2(&y).0 } else { y };
        }
        a
    }

    /// Forward pass that caches what backprop needs for stages with index
    /// `>= first_cached` (0-based).
    pub(crate) fn forward_cached(&self, x: &Array4<f32>, first_cached: usize) -> (Array4<f32>, Vec<StageCache>) {
        let mut a = x.clone();
        let mut caches = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let (mut y, cols) = s.conv.forward(&a);
            layers::relu_inplace(&mut y);
            let (next, arg) = if s.pool {
                let (p, arg) = layers::maxpool2(&y);
                (p, Some(arg))
            } else {
                (y.clone(), None)
            };
            if i >= first_cached {
                caches.push(StageCache {
                    cols,
                    activated: y,
                    pool_arg: arg,
                });
            }
            a = next;
        }
        (a, caches)
    }

    /// Backpropagates `dfeat` through the cached stages (the last `caches.len()`
    /// stages), returning their parameter gradients in stage order.
    pub(crate) fn backward(&self, caches: Vec<StageCache>, dfeat: Array4<f32>) -> Vec<StageGrad> {
        let first = self.stages.len() - caches.len();
        let mut grads = Vec::with_capacity(caches.len());
        let mut d = dfeat;
        for (k, cache) in caches.into_iter().enumerate().rev() {
            let stage = &self.stages[first + k];
            let mut dy = match &cache.pool_arg {
                Some(arg) => layers::maxpool2_backward(&d, arg, cache.activated.dim()),
                None => d,
            };
            layers::relu_backward(&mut dy, &cache.activated);
            let (dw, db, dx) = stage.conv.backward(&dy, &cache.cols, k > 0);
            grads.push(StageGrad { weight: dw, bias: db });
            d = dx.unwrap_or_else(|| Array4::zeros((0, 0, 0, 0)));
        }
        grads.reverse();
        grads
    }

    pub fn save(&self, path: &Path) -> Result<(), CamError> {
        let meta = BackboneMeta {
            id: self.id.clone(),
            pools: self.stages.iter().map(|s| s.pool).collect(),
        };
        let tensors = self.named_tensors("stage");
        let views: Vec<_> = tensors.iter().map(|(n, t)| (n.as_str(), t.view())).collect();
        write_tensor_file(path, BACKBONE_MAGIC, &meta, &views)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CamError> {
        let (meta, tensors): (BackboneMeta, _) = read_tensor_file(path, BACKBONE_MAGIC)?;
        let stages = stages_from_tensors(&tensors, "stage", &meta.pools)?;
        Ok(Backbone { id: meta.id, stages })
    }

    /// Weights as `(out, in, 3, 3)` and biases, named `<prefix><n>.weight|bias`.
    pub(crate) fn named_tensors(&self, prefix: &str) -> Vec<(String, ndarray::ArrayD<f32>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let (co, ci) = (s.conv.c_out(), s.conv.c_in());
            let w = s
                .conv
                .weight
                .clone()
                .into_shape_with_order((co, ci, 3, 3))
                .expect("conv weight reshape")
                .into_dyn();
            out.push((format!("{prefix}{}.weight", i + 1), w));
            out.push((format!("{prefix}{}.bias", i + 1), s.conv.bias.clone().into_dyn()));
        }
        out
    }
}

pub(crate) fn stages_from_tensors(
    tensors: &[(String, ndarray::ArrayD<f32>)],
    prefix: &str,
    pools: &[bool],
) -> Result<Vec<Stage>, CamError> {
    let find = |name: String| {
        tensors
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CamError::Format(format!("missing tensor {name}")))
    };
    let mut stages = Vec::with_capacity(pools.len());
    for (i, &pool) in pools.iter().enumerate() {
        let w = find(format!("{prefix}{}.weight", i + 1))?;
        let b = find(format!("{prefix}{}.bias", i + 1))?;
        let shape = w.shape().to_vec();
        if shape.len() != 4 || shape[2] != 3 || shape[3] != 3 || b.len() != shape[0] {
            return Err(CamError::Format(format!("stage {} has bad shape {shape:?}", i + 1)));
        }
        let weight = w
            .into_shape_with_order((shape[0], shape[1] * 9))
            .map_err(|e| CamError::Format(e.to_string()))?;
        let bias = b
            .into_shape_with_order(shape[0])
            .map_err(|e| CamError::Format(e.to_string()))?;
        stages.push(Stage {
            conv: Conv3x3 { weight, bias },
            pool,
        });
    }
    Ok(stages)
}
