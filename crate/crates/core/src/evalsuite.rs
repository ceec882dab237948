//! Mean IoU scoring and run comparison tables.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxer::Prediction;
use crate::geometry::{bbox_iou, BBox};
use crate::ingest::{DatasetManifest, Split};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for {} image(s), first {:?}", .0.len(), .0.first())]
    MissingPrediction(Vec<String>),
    #[error("more than one prediction for {} image(s), first {:?}", .0.len(), .0.first())]
    DuplicatePrediction(Vec<String>),
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("no reports to compare")]
    NoReports,
    #[error("bad report file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Scores of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_name: String,
    pub per_image: BTreeMap<String, f64>,
    pub miou: f64,
    pub n_images: usize,
    pub config_digest: String,
}

impl EvalReport {
    /// Builds a report; the mean is summed in id order.
    pub fn from_scores(run_name: &str, per_image: BTreeMap<String, f64>, config_digest: &str) -> Self {
        let n = per_image.len();
        let miou = if n == 0 {
            0.0
        } else {
            per_image.values().sum::<f64>() / n as f64
        };
        EvalReport {
            run_name: run_name.to_string(),
            per_image,
            miou,
            n_images: n,
            config_digest: config_digest.to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        fs::write(path, json).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| EvalError::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// IoU of every image of `split` against its ground-truth box.
///
/// Predictions for images outside the split are ignored; every split image
/// must be predicted exactly once.
pub fn evaluate_run(
    preds: &[Prediction],
    manifest: &DatasetManifest,
    split: Split,
    run_name: &str,
    config_digest: &str,
) -> Result<EvalReport, EvalError> {
    let mut by_id: HashMap<&str, Vec<BBox>> = HashMap::new();
    for p in preds {
        by_id.entry(p.image_id.as_str()).or_default().push(p.bbox);
    }
    let ids = manifest.ids_in(split);
    let mut dup: Vec<String> = ids
        .iter()
        .filter(|id| by_id.get(*id).is_some_and(|v| v.len() > 1))
        .map(|id| id.to_string())
        .collect();
    if !dup.is_empty() {
        dup.sort();
        return Err(EvalError::DuplicatePrediction(dup));
    }
    let mut missing: Vec<String> = ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(EvalError::MissingPrediction(missing));
    }
    let per_image = ids
        .iter()
        .map(|&id| {
            let gt = manifest.gt_box(id).expect("manifest ids have boxes");
            (id.to_string(), bbox_iou(&by_id[id][0], &gt))
        })
        .collect();
    Ok(EvalReport::from_scores(run_name, per_image, config_digest))
}

#[derive(Deserialize)]
struct DetectionRow {
    image_id: String,
    class: String,
    confidence: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Reduces detector output to one box per image.
///
/// Input is CSV with header `image_id,class,confidence,x1,y1,x2,y2` (corner
/// coordinates, right/bottom exclusive). For every manifest image the most
/// confident detection of `class_filter` is kept, earliest row on ties; images
/// without one get the whole-image box. Boxes are clipped to the image, and a
/// box that misses the image entirely also falls back.
pub fn ingest_external_detections(
    csv_text: &str,
    class_filter: &str,
    manifest: &DatasetManifest,
) -> Result<Vec<Prediction>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut best: HashMap<String, (f64, [i64; 4])> = HashMap::new();
    for row in reader.deserialize::<DetectionRow>() {
        let row = row.map_err(|e| EvalError::ParseError {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let coords = [row.x1, row.y1, row.x2, row.y2];
        if !row.confidence.is_finite() || coords.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::ParseError {
                line: reader.position().line() as usize,
                msg: "non-finite value".into(),
            });
        }
        if row.class != class_filter {
            continue;
        }
        if best.get(&row.image_id).is_none_or(|b| row.confidence > b.0) {
            best.insert(row.image_id, (row.confidence, coords.map(|v| v.round() as i64)));
        }
    }
    let out = manifest
        .images()
        .iter()
        .map(|im| {
            let whole = BBox::whole_image(im.width, im.height).expect("manifest sizes are positive");
            let bbox = best
                .get(&im.id)
                .and_then(|&(_, [x1, y1, x2, y2])| {
                    let (x1, x2) = (x1.clamp(0, im.width as i64), x2.clamp(0, im.width as i64));
                    let (y1, y2) = (y1.clamp(0, im.height as i64), y2.clamp(0, im.height as i64));
                    BBox::new(x1, y1, x2 - x1, y2 - y1).ok()
                })
                .unwrap_or(whole);
            Prediction {
                image_id: im.id.clone(),
                bbox,
            }
        })
        .collect();
    Ok(out)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run_name: String,
    pub miou: f64,
    pub n_images: usize,
}

/// Rows ordered by mIoU, highest first, ties by run name.
pub fn compare_runs(reports: &[EvalReport]) -> Result<Vec<ComparisonRow>, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            run_name: r.run_name.clone(),
            miou: r.miou,
            n_images: r.n_images,
        })
        .collect();
    rows.sort_by(|a, b| b.miou.total_cmp(&a.miou).then_with(|| a.run_name.cmp(&b.run_name)));
    Ok(rows)
}

pub fn render_table_text(rows: &[ComparisonRow]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.run_name.chars().count())
        .chain(["run".len()])
        .max()
        .unwrap_or(3);
    let mut s = format!("{:<name_w$}  {:>6}  {:>8}\n", "run", "mIoU", "images");
    for r in rows {
        s.push_str(&format!(
            "{:<name_w$}  {:>6.4}  {:>8}\n",
            r.run_name, r.miou, r.n_images
        ));
    }
    s
}

pub fn render_table_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}
