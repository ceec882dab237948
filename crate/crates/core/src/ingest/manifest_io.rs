use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DatasetManifest, IngestError, ManifestRecord};

/// Writes one JSON object per line, in manifest order.
pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    let io = |e| IngestError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in m.records() {
        let line = serde_json::to_string(&r).expect("manifest record serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a JSON-lines manifest. Blank lines are skipped; any malformed record,
/// duplicate id or invariant violation is reported with its 1-based line number.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let f = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut records = Vec::new();
    let mut lines_of = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
        lines_of.push(i + 1);
    }
    if records.is_empty() {
        return Err(IngestError::Parse {
            line: 0,
            msg: "manifest contains no records".into(),
        });
    }
    DatasetManifest::from_records(records).map_err(|e| match e {
        IngestError::Invariant { index, msg } => IngestError::Parse {
            line: lines_of[index],
            msg,
        },
        other => other,
    })
}

/// Content digest of a manifest, stable across save/load.
pub fn manifest_digest(m: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    for r in m.records() {
        h.update(serde_json::to_vec(&r).expect("manifest record serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Image paths in a manifest are taken relative to the manifest's directory
/// unless absolute.
pub fn resolve_image_path(manifest_path: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}
