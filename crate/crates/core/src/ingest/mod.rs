//! Dataset manifests: the image list with labels, ground-truth boxes and split tags,
//! plus the two producers (CompCars adapter and synthetic generator).

mod compcars;
mod manifest_io;
pub(crate) mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, ImageRef};

pub use compcars::{compcars_adapter, compcars_adapter_with, CompCarsLayout};
pub use manifest_io::{load_manifest, manifest_digest, resolve_image_path, save_manifest};
pub use synth::{render_sample, synth_generate, synth_records, SynthConfig, SynthSample};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing annotation for {id}: {what}")]
    MissingAnnotation { id: String, what: String },
    #[error("split list names {id} but no such image exists")]
    MalformedSplit { id: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest record {index}: {msg}")]
    Invariant { index: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}, expected train or test")),
        }
    }
}

/// One of the three human label fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelField {
    Make,
    Model,
    Year,
}

impl LabelField {
    pub fn name(&self) -> &'static str {
        match self {
            LabelField::Make => "make",
            LabelField::Model => "model",
            LabelField::Year => "year",
        }
    }
}

impl fmt::Display for LabelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "make" => Ok(LabelField::Make),
            "model" => Ok(LabelField::Model),
            "year" => Ok(LabelField::Year),
            other => Err(format!("unknown label field {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub make: String,
    pub model: String,
    pub year: String,
}

impl LabelRecord {
    pub fn get(&self, field: LabelField) -> &str {
        match field {
            LabelField::Make => &self.make,
            LabelField::Model => &self.model,
            LabelField::Year => &self.year,
        }
    }
}

/// Flat per-image view of a manifest; also the on-disk JSON-lines record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub make: String,
    pub model: String,
    pub year: String,
    pub bbox: BBox,
    pub split: Split,
}

impl ManifestRecord {
    pub fn image_ref(&self) -> ImageRef {
        ImageRef {
            id: self.id.clone(),
            path: self.path.clone(),
            width: self.width,
            height: self.height,
        }
    }

    pub fn labels(&self) -> LabelRecord {
        LabelRecord {
            make: self.make.clone(),
            model: self.model.clone(),
            year: self.year.clone(),
        }
    }
}

/// Validated image collection. Every image id has labels, a ground-truth box and a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    images: Vec<ImageRef>,
    index: HashMap<String, usize>,
    labels: BTreeMap<String, LabelRecord>,
    gt_boxes: BTreeMap<String, BBox>,
    split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    /// Builds a manifest, checking id uniqueness, box containment and that each
    /// model maps to a single make.
    pub fn from_records(records: Vec<ManifestRecord>) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::Invariant {
                index: 0,
                msg: "manifest has no records".into(),
            });
        }
        let mut m = DatasetManifest {
            images: Vec::with_capacity(records.len()),
            index: HashMap::with_capacity(records.len()),
            labels: BTreeMap::new(),
            gt_boxes: BTreeMap::new(),
            split: BTreeMap::new(),
        };
        let mut model_make: HashMap<String, String> = HashMap::new();
        for (i, r) in records.into_iter().enumerate() {
            let bad = |msg: String| IngestError::Invariant { index: i, msg };
            if r.id.is_empty() {
                return Err(bad("empty image id".into()));
            }
            if m.index.contains_key(&r.id) {
                return Err(bad(format!("duplicate image id {:?}", r.id)));
            }
            if r.width == 0 || r.height == 0 {
                return Err(bad(format!("image {:?} has zero size", r.id)));
            }
            if !r.bbox.fits_within(r.width, r.height) {
                return Err(bad(format!("box of {:?} exceeds {}x{} image", r.id, r.width, r.height)));
            }
            match model_make.get(&r.model) {
                Some(make) if *make != r.make => {
                    return Err(bad(format!(
                        "model {:?} listed under makes {:?} and {:?}",
                        r.model, make, r.make
                    )))
                }
                Some(_) => {}
                None => {
                    model_make.insert(r.model.clone(), r.make.clone());
                }
            }
            m.index.insert(r.id.clone(), m.images.len());
            m.labels.insert(r.id.clone(), r.labels());
            m.gt_boxes.insert(r.id.clone(), r.bbox);
            m.split.insert(r.id.clone(), r.split);
            m.images.push(r.image_ref());
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images in manifest order.
    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageRef> {
        self.index.get(id).map(|&i| &self.images[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn labels(&self, id: &str) -> Option<&LabelRecord> {
        self.labels.get(id)
    }

    pub fn gt_box(&self, id: &str) -> Option<BBox> {
        self.gt_boxes.get(id).copied()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    /// Ids of one split, in manifest order.
    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.images
            .iter()
            .filter(|im| self.split[&im.id] == split)
            .map(|im| im.id.as_str())
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = ManifestRecord> + '_ {
        self.images.iter().map(|im| {
            let l = &self.labels[&im.id];
            ManifestRecord {
                id: im.id.clone(),
                path: im.path.clone(),
                width: im.width,
                height: im.height,
                make: l.make.clone(),
                model: l.model.clone(),
                year: l.year.clone(),
                bbox: self.gt_boxes[&im.id],
                split: self.split[&im.id],
            }
        })
    }

    /// Distinct values of a label field, sorted.
    pub fn vocabulary(&self, field: LabelField) -> Vec<String> {
        let mut v: Vec<String> = self.labels.values().map(|l| l.get(field).to_string()).collect();
        v.sort();
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, make: &str, model: &str, split: Split) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            path: format!("{id}.png"),
            width: 32,
            height: 24,
            make: make.into(),
            model: model.into(),
            year: "2012".into(),
            bbox: BBox::new(1, 2, 10, 10).unwrap(),
            split,
        }
    }

    #[test]
    fn rejects_hierarchy_violation() {
        let err = DatasetManifest::from_records(vec![
            record("a", "audi", "a4", Split::Train),
            record("b", "bmw", "a4", Split::Test),
        ])
        .unwrap_err();
        assert!(matches!(err, IngestError::Invariant { index: 1, .. }));
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(DatasetManifest::from_records(vec![]).is_err());
        let err = DatasetManifest::from_records(vec![
            record("a", "audi", "a4", Split::Train),
            record("a", "audi", "a4", Split::Test),
        ])
        .unwrap_err();
        assert!(matches!(err, IngestError::Invariant { index: 1, .. }));
    }

    #[test]
    fn rejects_box_outside_image() {
        let mut r = record("a", "audi", "a4", Split::Train);
        r.bbox = BBox::new(30, 0, 5, 5).unwrap();
        assert!(DatasetManifest::from_records(vec![r]).is_err());
    }

    #[test]
    fn split_queries() {
        let m = DatasetManifest::from_records(vec![
            record("a", "audi", "a4", Split::Train),
            record("b", "audi", "a6", Split::Test),
            record("c", "bmw", "x5", Split::Train),
        ])
        .unwrap();
        assert_eq!(m.ids_in(Split::Train), vec!["a", "c"]);
        assert_eq!(m.ids_in(Split::Test), vec!["b"]);
        assert_eq!(m.vocabulary(LabelField::Make), vec!["audi", "bmw"]);
        assert_eq!(m.records().count(), 3);
    }
}
