//! Model checkpoints.
//!
//! A checkpoint directory holds `params.bin`, `meta.json` and `splits.json`.
//! `params.bin` layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "ROCPCKPT"
//! version u32      1
//! count   u64      number of matrices
//! per matrix:
//!   name_len u64, name (UTF-8)
//!   rows u64, cols u64
//!   rows*cols f64 values, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::graph::{SplitAssignment, SplitFile};
use crate::io::atomic_write;
use crate::models::{Model, ModelConfig, ModelParams};
use crate::rocp::SmoothingConfig;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"ROCPCKPT";
const VERSION: u32 = 1;

pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "meta.json";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub smoothing: SmoothingConfig,
    pub seed: u64,
    pub dataset: String,
    pub num_features: usize,
    pub num_classes: usize,
}

/// Serializes named matrices in the `params.bin` layout.
pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, m) in params.names.iter().zip(&params.values) {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            RocpError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| RocpError::Checkpoint(format!("length {v} too large")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(RocpError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(RocpError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.usize()?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for _ in 0..count {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| RocpError::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rows = r.usize()?;
        let cols = r.usize()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| RocpError::Checkpoint(format!("{name}: shape {rows}x{cols} overflows")))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Matrix::from_vec(rows, cols, data)?);
        names.push(name);
    }
    if r.pos != bytes.len() {
        return Err(RocpError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelParams { names, values })
}

/// Writes a checkpoint directory.
pub fn save_checkpoint(dir: &Path, model: &Model, meta: &CheckpointMeta, splits: &SplitAssignment) -> Result<()> {
    fs::create_dir_all(dir)?;
    atomic_write(&dir.join(PARAMS_FILE), &encode_params(&model.params))?;
    atomic_write(&dir.join(META_FILE), &serde_json::to_vec_pretty(meta)?)?;
    atomic_write(&dir.join(SPLITS_FILE), &serde_json::to_vec_pretty(&splits.to_file())?)?;
    Ok(())
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub splits: SplitFile,
}

/// Reads a checkpoint and checks the parameter layout against the config.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(RocpError::MissingFile(path));
        }
        Ok(fs::read(&path)?)
    };
    let meta: CheckpointMeta = serde_json::from_slice(&read(META_FILE)?)?;
    let splits: SplitFile = serde_json::from_slice(&read(SPLITS_FILE)?)?;
    let params = decode_params(&read(PARAMS_FILE)?)?;
    let mut model = Model::init(meta.model.clone(), meta.num_features, meta.num_classes, 0)?;
    if model.params.names != params.names || model.params.shapes() != params.shapes() {
        return Err(RocpError::Checkpoint(
            "parameter names or shapes do not match the model config".into(),
        ));
    }
    model.params = params;
    Ok(Checkpoint { model, meta, splits })
}
