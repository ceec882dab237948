use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabelError;
use crate::camnet::{preprocess_center, Backbone, CamError, ImageSource};
use crate::ingest::DatasetManifest;
use crate::tensorfile::{read_tensor_file, write_tensor_file, TensorFileError};

const FEATURE_MAGIC: &[u8; 8] = b"CLFEAT01";

/// One embedding row per image id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub vectors: Array2<f32>,
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    ids: Vec<String>,
    dim: usize,
}

impl From<TensorFileError> for LabelError {
    fn from(e: TensorFileError) -> Self {
        match e {
            TensorFileError::Io { path, source } => LabelError::Io { path, source },
            TensorFileError::Format { path, msg } => LabelError::Format(format!("{path}: {msg}")),
        }
    }
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, vectors: Array2<f32>) -> Result<Self, LabelError> {
        if ids.len() != vectors.nrows() {
            return Err(LabelError::Invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                vectors.nrows()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(LabelError::Invalid("non-finite feature value".into()));
        }
        Ok(FeatureTable { ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Binary matrix file: JSON header `{ids, dim}` and one `(N, D)` tensor.
    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        let header = FeatureHeader {
            ids: self.ids.clone(),
            dim: self.dim(),
        };
        let v = self.vectors.view().into_dyn();
        write_tensor_file(path, FEATURE_MAGIC, &header, &[("vectors", v)])?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let (header, mut tensors): (FeatureHeader, _) = read_tensor_file(path, FEATURE_MAGIC)?;
        let (_, t) = tensors
            .pop()
            .ok_or_else(|| LabelError::Format(format!("{}: no tensor", path.display())))?;
        let vectors: Array2<f32> = t.into_dimensionality().map_err(|e| LabelError::Format(e.to_string()))?;
        if vectors.ncols() != header.dim {
            return Err(LabelError::Format(format!(
                "header dim {} but rows have {}",
                header.dim,
                vectors.ncols()
            )));
        }
        FeatureTable::new(header.ids, vectors)
    }
}

/// Global-average-pooled backbone features for every manifest image, in
/// manifest order. Each image is scaled so its shorter side is `input_size`
/// and centre-cropped; no parameters change.
pub fn extract_features(
    manifest: &DatasetManifest,
    backbone: &Backbone,
    images: &dyn ImageSource,
    input_size: usize,
) -> Result<FeatureTable, LabelError> {
    let rows: Vec<Vec<f32>> = manifest
        .images()
        .par_iter()
        .map(|im| {
            let img = images.load(im).map_err(|e| LabelError::UnreadableImage {
                id: im.id.clone(),
                msg: match e {
                    CamError::Image { msg, .. } => msg,
                    other => other.to_string(),
                },
            })?;
            let x = preprocess_center(&img, input_size);
            let (c, h, w) = x.dim();
            let x = x.into_shape_with_order((c, 1, h, w)).expect("batch of one");
            let f = backbone.forward(&x);
            let pooled = f
                .mean_axis(Axis(3))
                .and_then(|m| m.mean_axis(Axis(2)))
                .expect("non-empty feature map");
            Ok(pooled.iter().copied().collect())
        })
        .collect::<Result<_, LabelError>>()?;
    let d = backbone.out_channels();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let vectors = Array2::from_shape_vec((manifest.len(), d), flat).expect("one row per image");
    FeatureTable::new(manifest.images().iter().map(|im| im.id.clone()).collect(), vectors)
}
