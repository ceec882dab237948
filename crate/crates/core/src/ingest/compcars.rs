//! Adapter for the web-nature part of CompCars as distributed:
//!
//! ```text
//! <root>/image/<make>/<model>/<year>/<name>.jpg
//! <root>/label/<make>/<model>/<year>/<name>.txt   viewpoint / box count / "x1 y1 x2 y2"
//! <root>/train_test_split/classification/{train,test}.txt   one "<make>/<model>/<year>/<name>.jpg" per line
//! ```
//!
//! Image ids are the list entries without extension. Make, model and year labels
//! are the directory names (model ids are unique across makes in the release).

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetManifest, IngestError, ManifestRecord, Split};
use crate::geometry::BBox;

/// Directory names relative to the CompCars root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompCarsLayout {
    pub image_dir: PathBuf,
    pub label_dir: PathBuf,
    pub train_list: PathBuf,
    pub test_list: PathBuf,
}

impl Default for CompCarsLayout {
    fn default() -> Self {
        CompCarsLayout {
            image_dir: "image".into(),
            label_dir: "label".into(),
            train_list: "train_test_split/classification/train.txt".into(),
            test_list: "train_test_split/classification/test.txt".into(),
        }
    }
}

pub fn compcars_adapter(root: &Path) -> Result<DatasetManifest, IngestError> {
    compcars_adapter_with(root, &CompCarsLayout::default())
}

pub fn compcars_adapter_with(root: &Path, layout: &CompCarsLayout) -> Result<DatasetManifest, IngestError> {
    let mut records = Vec::new();
    for (list, split) in [(&layout.train_list, Split::Train), (&layout.test_list, Split::Test)] {
        let list_path = root.join(list);
        let text = fs::read_to_string(&list_path).map_err(|e| IngestError::io(&list_path, e))?;
        for entry in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            records.push(read_entry(root, layout, entry, split)?);
        }
    }
    DatasetManifest::from_records(records)
}

fn read_entry(root: &Path, layout: &CompCarsLayout, entry: &str, split: Split) -> Result<ManifestRecord, IngestError> {
    let rel = Path::new(entry);
    let id = rel.with_extension("").to_string_lossy().replace('\\', "/");
    let parts: Vec<&str> = id.split('/').collect();
    if parts.len() != 4 {
        return Err(IngestError::MalformedSplit { id });
    }
    let image_path = root.join(&layout.image_dir).join(rel);
    if !image_path.is_file() {
        return Err(IngestError::MalformedSplit { id });
    }
    let (width, height) = image_dimensions(&image_path)?;

    let label_path = root.join(&layout.label_dir).join(rel.with_extension("txt"));
    let label = fs::read_to_string(&label_path).map_err(|_| IngestError::MissingAnnotation {
        id: id.clone(),
        what: format!("label file {} not readable", label_path.display()),
    })?;
    let bbox = parse_label_box(&label, width, height).ok_or_else(|| IngestError::MissingAnnotation {
        id: id.clone(),
        what: "no usable bounding box in label file".into(),
    })?;

    Ok(ManifestRecord {
        path: root.join(&layout.image_dir).join(rel).to_string_lossy().into_owned(),
        width,
        height,
        make: parts[0].to_string(),
        model: parts[1].to_string(),
        year: parts[2].to_string(),
        bbox,
        split,
        id,
    })
}

fn image_dimensions(path: &Path) -> Result<(u32, u32), IngestError> {
    let err = |msg: String| IngestError::Image {
        path: path.display().to_string(),
        msg,
    };
    image::ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?
        .into_dimensions()
        .map_err(|e| err(e.to_string()))
}

/// The box is the first line holding four numbers (after the viewpoint and count lines).
fn parse_label_box(text: &str, width: u32, height: u32) -> Option<BBox> {
    let nums = text.lines().skip(2).find_map(|l| {
        let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().ok()?;
        (v.len() == 4).then_some(v)
    })?;
    normalize_box([nums[0], nums[1], nums[2], nums[3]], width, height)
}

/// Converts either a corner pair or an origin+size quadruple to a clipped half-open box.
/// Corner encoding is assumed when `x2 > x1`, `y2 > y1` and `x2 <= width`.
pub(crate) fn normalize_box(v: [f64; 4], width: u32, height: u32) -> Option<BBox> {
    let [a, b, c, d] = v.map(|x| x.round() as i64);
    let (x0, y0, x1, y1) = if c > a && d > b && c <= width as i64 {
        (a, b, c, d)
    } else {
        (a, b, a + c, b + d)
    };
    let x0 = x0.clamp(0, width as i64);
    let y0 = y0.clamp(0, height as i64);
    let x1 = x1.clamp(0, width as i64);
    let y1 = y1.clamp(0, height as i64);
    BBox::new(x0, y0, x1 - x0, y1 - y0).ok()
}
