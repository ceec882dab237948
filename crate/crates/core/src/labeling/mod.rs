//! Label spaces: human labels, merged field pairs, random labels, and k-means
//! pseudo-labels over backbone embeddings.

mod features;
mod kmeans;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DatasetManifest, LabelField, Split};

pub use features::{extract_features, FeatureTable};
pub use kmeans::{
    cluster_stats, cluster_to_labels, kmeans_cluster, kmeans_from_centroids, kmeans_plus_plus_init, ClusterResult,
    ClusterStats, LloydOutcome, SizeStats,
};

/// Label count used when a random label space is requested without one.
pub const DEFAULT_RANDOM_LABELS: usize = 75;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("fields {0} and {1} cannot be merged")]
    InvalidPair(LabelField, LabelField),
    #[error("label count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("k = {k} exceeds the {n} available vectors")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot read image {id}: {msg}")]
    UnreadableImage { id: String, msg: String },
    #[error("invalid label data: {0}")]
    Invalid(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LabelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LabelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Human,
    Merged,
    Random,
    Cluster,
}

/// One complete assignment of class indices to image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub space_name: String,
    pub kind: LabelKind,
    pub vocab: Vec<String>,
    pub mapping: BTreeMap<String, usize>,
}

impl LabelAssignment {
    pub fn validate(&self) -> Result<(), LabelError> {
        let mut seen = HashSet::new();
        for v in &self.vocab {
            if !seen.insert(v) {
                return Err(LabelError::Invalid(format!("duplicate vocab entry {v:?}")));
            }
        }
        if let Some((id, &l)) = self.mapping.iter().find(|(_, &l)| l >= self.vocab.len()) {
            return Err(LabelError::Invalid(format!(
                "image {id} has label {l} but vocab has {} entries",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    /// True when the mapping covers exactly the manifest's ids.
    pub fn covers_exactly(&self, manifest: &DatasetManifest) -> bool {
        self.mapping.len() == manifest.len() && manifest.images().iter().all(|im| self.mapping.contains_key(&im.id))
    }

    /// Images per label, indexed like `vocab`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.vocab.len()];
        for &l in self.mapping.values() {
            c[l] += 1;
        }
        c
    }

    /// Restriction to the ids of one split.
    pub fn restricted_to(&self, manifest: &DatasetManifest, split: Split) -> Self {
        LabelAssignment {
            mapping: self
                .mapping
                .iter()
                .filter(|(id, _)| manifest.split_of(id) == Some(split))
                .map(|(id, &l)| (id.clone(), l))
                .collect(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        let json = serde_json::to_vec_pretty(self).expect("label assignment serializes");
        fs::write(path, json).map_err(|e| LabelError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let bytes = fs::read(path).map_err(|e| LabelError::io(path, e))?;
        let a: LabelAssignment =
            serde_json::from_slice(&bytes).map_err(|e| LabelError::Format(format!("{}: {e}", path.display())))?;
        a.validate()?;
        Ok(a)
    }
}

fn from_names(space_name: String, kind: LabelKind, names: BTreeMap<String, String>) -> LabelAssignment {
    let mut vocab: Vec<String> = names.values().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mapping = names
        .iter()
        .map(|(id, name)| (id.clone(), index[name.as_str()]))
        .collect();
    LabelAssignment {
        space_name,
        kind,
        vocab,
        mapping,
    }
}

/// The annotated values of one field; vocab sorted.
pub fn human_labels(manifest: &DatasetManifest, field: LabelField) -> LabelAssignment {
    let names = manifest
        .images()
        .iter()
        .map(|im| {
            let l = manifest.labels(&im.id).expect("manifest ids have labels");
            (im.id.clone(), l.get(field).to_string())
        })
        .collect();
    from_names(field.name().to_string(), LabelKind::Human, names)
}

/// Concatenated labels `first#second`; vocab is the sorted set of observed pairs.
pub fn merge_labels(
    manifest: &DatasetManifest,
    fields: (LabelField, LabelField),
) -> Result<LabelAssignment, LabelError> {
    use LabelField::{Make, Model};
    let (a, b) = fields;
    if a == b || matches!((a, b), (Make, Model) | (Model, Make)) {
        return Err(LabelError::InvalidPair(a, b));
    }
    let names = manifest
        .images()
        .iter()
        .map(|im| {
            let l = manifest.labels(&im.id).expect("manifest ids have labels");
            (im.id.clone(), format!("{}#{}", l.get(a), l.get(b)))
        })
        .collect();
    Ok(from_names(
        format!("{}-{}", a.name(), b.name()),
        LabelKind::Merged,
        names,
    ))
}

/// Uniform labels in `0..n`, drawn in sorted-id order from a seeded stream.
pub fn random_labels(manifest: &DatasetManifest, n: usize, seed: u64) -> Result<LabelAssignment, LabelError> {
    if n < 1 {
        return Err(LabelError::InvalidCount(n));
    }
    let mut ids: Vec<&str> = manifest.images().iter().map(|im| im.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mapping = ids
        .into_iter()
        .map(|id| (id.to_string(), rng.random_range(0..n)))
        .collect();
    Ok(LabelAssignment {
        space_name: format!("random{n}"),
        kind: LabelKind::Random,
        vocab: (0..n).map(|i| format!("r{i}")).collect(),
        mapping,
    })
}
