//! Parameter files: a JSON manifest next to a flat little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{param_shapes, Seq2SeqParams, PARAM_NAMES};
use super::tensor::Mat;

const FORMAT: &str = "spoken-latex-params";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    vocab_size: usize,
    width: usize,
    blob: String,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<stem>.json` and `<stem>.bin`; `manifest` is the JSON path.
pub fn save_params(params: &Seq2SeqParams<f32>, manifest: &Path) -> Result<(), CheckpointError> {
    let blob_path = manifest.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CheckpointError::Malformed("bad manifest path".into()))?
        .to_string();
    let mut bytes = Vec::with_capacity(params.num_params() * 4);
    for t in &params.tensors {
        for x in &t.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let m = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32".into(),
        vocab_size: params.vocab_size,
        width: params.width,
        blob: blob_name,
        tensors: params
            .tensors
            .iter()
            .zip(PARAM_NAMES)
            .map(|(t, name)| TensorEntry {
                name: name.into(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    fs::write(&blob_path, bytes).map_err(io_err(&blob_path))?;
    fs::write(manifest, serde_json::to_string_pretty(&m)?).map_err(io_err(manifest))?;
    Ok(())
}

pub fn load_params(manifest: &Path) -> Result<Seq2SeqParams<f32>, CheckpointError> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.version != VERSION || m.dtype != "f32" {
        return Err(CheckpointError::Malformed(format!(
            "unsupported format {} v{} {}",
            m.format, m.version, m.dtype
        )));
    }
    let expected = param_shapes(m.vocab_size, m.width);
    let found: Vec<(usize, usize)> = m.tensors.iter().map(|t| (t.rows, t.cols)).collect();
    if expected != found {
        return Err(CheckpointError::Malformed("tensor shapes do not match the model".into()));
    }
    let blob_path = manifest.with_file_name(&m.blob);
    let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let total: usize = expected.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != total * 4 {
        return Err(CheckpointError::Malformed(format!(
            "blob has {} bytes, expected {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = expected
        .iter()
        .map(|&(r, c)| Mat::from_vec(r, c, floats.by_ref().take(r * c).collect()))
        .collect();
    Ok(Seq2SeqParams {
        vocab_size: m.vocab_size,
        width: m.width,
        tensors,
    })
}
