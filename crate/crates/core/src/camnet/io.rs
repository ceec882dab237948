//! On-disk formats.
//!
//! Checkpoints use the shared tensor container (magic `CLCAMW01`) with the model
//! spec and training metadata in the JSON header and tensors
//! `backbone.stage<n>.weight` `(out, in, 3, 3)`, `backbone.stage<n>.bias`,
//! `head.weight` `(classes, channels)` and `head.bias`.
//!
//! Heatmaps are written as a single-channel PFM (`Pf`, little-endian, rows
//! bottom-to-top as the format prescribes) plus a JSON sidecar with the same
//! stem.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::backbone::{stages_from_tensors, Backbone};
use super::{CamError, CamModelSpec, CamWeights, Heatmap, TrainMeta};
use crate::tensorfile::{read_tensor_file, write_tensor_file};

const CHECKPOINT_MAGIC: &[u8; 8] = b"CLCAMW01";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: CamModelSpec,
    train: TrainMeta,
    backbone_id: String,
    pools: Vec<bool>,
}

fn io_err(path: &Path, source: std::io::Error) -> CamError {
    CamError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl CamWeights {
    pub fn save(&self, path: &Path) -> Result<(), CamError> {
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            train: self.meta.clone(),
            backbone_id: self.backbone.id.clone(),
            pools: self.backbone.stages.iter().map(|s| s.pool).collect(),
        };
        let mut tensors = self.backbone.named_tensors("backbone.stage");
        tensors.push(("head.weight".into(), self.classifier.clone().into_dyn()));
        tensors.push(("head.bias".into(), self.bias.clone().into_dyn()));
        let views: Vec<_> = tensors.iter().map(|(n, t)| (n.as_str(), t.view())).collect();
        write_tensor_file(path, CHECKPOINT_MAGIC, &meta, &views)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CamError> {
        let (meta, tensors): (CheckpointMeta, _) = read_tensor_file(path, CHECKPOINT_MAGIC)?;
        let stages = stages_from_tensors(&tensors, "backbone.stage", &meta.pools)?;
        let take = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| CamError::Format(format!("missing tensor {name}")))
        };
        let classifier: Array2<f32> = take("head.weight")?
            .into_dimensionality()
            .map_err(|e| CamError::Format(e.to_string()))?;
        let bias: Array1<f32> = take("head.bias")?
            .into_dimensionality()
            .map_err(|e| CamError::Format(e.to_string()))?;
        let backbone = Backbone {
            id: meta.backbone_id,
            stages,
        };
        if classifier.ncols() != backbone.out_channels() || bias.len() != classifier.nrows() {
            return Err(CamError::Format(format!(
                "head {:?} does not fit a {}-channel backbone",
                classifier.dim(),
                backbone.out_channels()
            )));
        }
        Ok(CamWeights {
            spec: meta.spec,
            backbone,
            classifier,
            bias,
            meta: meta.train,
        })
    }
}

/// JSON sidecar written next to each heatmap grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub image_id: String,
    pub class_index: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_width: Option<u32>,
}

/// Filesystem-safe, reversible file stem for an image id: `[A-Za-z0-9._-]` are
/// kept, every other byte becomes `%XX`.
pub fn heatmap_file_stem(image_id: &str) -> String {
    let mut s = String::with_capacity(image_id.len());
    for b in image_id.bytes() {
        if b.is_ascii_alphanumeric() || b"._-".contains(&b) {
            s.push(b as char);
        } else {
            s.push_str(&format!("%{b:02X}"));
        }
    }
    s
}

/// Writes `<dir>/<stem>.pfm` and `<dir>/<stem>.json`; returns the PFM path.
pub fn save_heatmap(h: &Heatmap, dir: &Path) -> Result<PathBuf, CamError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let stem = heatmap_file_stem(&h.image_id);
    let grid = dir.join(format!("{stem}.pfm"));
    let (rows, cols) = h.values.dim();
    let mut buf = format!("Pf\n{cols} {rows}\n-1.0\n").into_bytes();
    for y in (0..rows).rev() {
        for x in 0..cols {
            buf.extend_from_slice(&h.values[[y, x]].to_le_bytes());
        }
    }
    fs::File::create(&grid)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| io_err(&grid, e))?;
    let sidecar = HeatmapSidecar {
        image_id: h.image_id.clone(),
        class_index: h.class_index,
        height: rows,
        width: cols,
        source_height: Some(h.source_size.0),
        source_width: Some(h.source_size.1),
    };
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes")).map_err(|e| io_err(&json, e))?;
    Ok(grid)
}

/// 8-bit graymap of the heatmap after min-max normalisation.
pub fn save_heatmap_pgm(h: &Heatmap, path: &Path) -> Result<(), CamError> {
    let g = crate::boxer::to_grayscale(h);
    g.to_image()
        .save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| CamError::Format(format!("{}: {e}", path.display())))
}

fn parse_pfm(bytes: &[u8]) -> Result<Array2<f32>, String> {
    // Three whitespace-terminated header tokens, then the payload.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the payload
    if tokens[0] != "Pf" {
        return Err(format!("expected grayscale PFM, found {:?}", tokens[0]));
    }
    let cols: usize = tokens[1].parse().map_err(|_| "bad width")?;
    let rows: usize = tokens[2].parse().map_err(|_| "bad height")?;
    let scale: f32 = tokens[3].parse().map_err(|_| "bad scale")?;
    let payload = bytes.get(pos..).ok_or("missing payload")?;
    if payload.len() != rows * cols * 4 {
        return Err(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            rows * cols * 4
        ));
    }
    let mut out = Array2::zeros((rows, cols));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (r, c) = (i / cols, i % cols);
        out[[rows - 1 - r, c]] = v;
    }
    Ok(out)
}

/// Reads a heatmap grid and its sidecar.
pub fn load_heatmap(grid: &Path) -> Result<Heatmap, CamError> {
    let bytes = fs::read(grid).map_err(|e| io_err(grid, e))?;
    let values = parse_pfm(&bytes).map_err(|m| CamError::Format(format!("{}: {m}", grid.display())))?;
    let json = grid.with_extension("json");
    let side: HeatmapSidecar = serde_json::from_slice(&fs::read(&json).map_err(|e| io_err(&json, e))?)
        .map_err(|e| CamError::Format(format!("{}: {e}", json.display())))?;
    if values.dim() != (side.height, side.width) {
        return Err(CamError::Format(format!(
            "{}: grid is {:?} but sidecar says {}x{}",
            grid.display(),
            values.dim(),
            side.height,
            side.width
        )));
    }
    Ok(Heatmap {
        source_size: (
            side.source_height.unwrap_or(side.height as u32),
            side.source_width.unwrap_or(side.width as u32),
        ),
        values,
        image_id: side.image_id,
        class_index: side.class_index,
    })
}

/// Every `*.pfm` heatmap in `dir`, sorted by image id.
pub fn load_heatmap_dir(dir: &Path) -> Result<Vec<Heatmap>, CamError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "pfm") {
            out.push(load_heatmap(&p)?);
        }
    }
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}
