//! Binary container shared by checkpoints and feature tables.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes, identifies the payload kind
//! header_len   u64 little-endian
//! header       UTF-8 JSON: {"meta": <kind-specific>, "tensors": [{"name", "shape"}, ...]}
//! payload      f32 little-endian, tensors concatenated in header order, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

pub type NamedTensor = (String, ArrayD<f32>);

pub fn write_tensor_file<M: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    meta: &M,
    tensors: &[(&str, ArrayViewD<'_, f32>)],
) -> Result<(), TensorFileError> {
    let io = |source| TensorFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let envelope = Envelope {
        meta,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&envelope).map_err(|e| TensorFileError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(magic).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for (_, t) in tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_tensor_file<M: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
) -> Result<(M, Vec<NamedTensor>), TensorFileError> {
    let p = path.display().to_string();
    let io = |source| TensorFileError::Io {
        path: p.clone(),
        source,
    };
    let fmt = |msg: String| TensorFileError::Format { path: p.clone(), msg };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(io)?;
    if &got != magic {
        return Err(fmt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    let envelope: Envelope<M> = serde_json::from_slice(&header).map_err(|e| fmt(format!("bad header: {e}")))?;
    let mut out = Vec::with_capacity(envelope.tensors.len());
    let mut buf = [0u8; 4];
    for entry in envelope.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| fmt(format!("payload truncated in tensor {}", entry.name)))?;
            data.push(f32::from_le_bytes(buf));
        }
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).map_err(|e| fmt(e.to_string()))?;
        out.push((entry.name, t));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok((envelope.meta, out))
}
