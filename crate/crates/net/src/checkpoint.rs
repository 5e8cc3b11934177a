//! Binary checkpoints: magic, JSON model config, then every stored tensor in
//! declaration order (including batch-norm running statistics) as raw
//! little-endian `f64`.
//!
//! ```text
//! "JMNET1\0" | u64 config_len | config JSON | u64 n_tensors |
//!   n_tensors × (u64 ndim | ndim × u64 dim | prod(dim) × f64)
//! ```

use std::path::Path;

use crate::model::{Model, ModelConfig};
use crate::NetError;

const MAGIC: &[u8; 7] = b"JMNET1\0";

pub fn to_bytes(model: &Model) -> Result<Vec<u8>, NetError> {
    let mut out = MAGIC.to_vec();
    let config = serde_json::to_vec(model.config())?;
    out.extend((config.len() as u64).to_le_bytes());
    out.extend(config);
    let state = model.state();
    out.extend((state.len() as u64).to_le_bytes());
    for (t, _) in state {
        out.extend((t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NetError::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize, NetError> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().unwrap());
        usize::try_from(v).map_err(|_| NetError::Checkpoint(format!("{what} {v} out of range")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, NetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(NetError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let n = r.u64("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(n, "config")?)?;
    let mut model = Model::new(config, 0)?;
    let count = r.u64("tensor count")?;
    let mut state = model.state_mut();
    if count != state.len() {
        return Err(NetError::Mismatch(format!(
            "checkpoint holds {count} tensors, the architecture has {}",
            state.len()
        )));
    }
    for (i, t) in state.iter_mut().enumerate() {
        let ndim = r.u64("tensor rank")?;
        let dims = (0..ndim).map(|_| r.u64("tensor dim")).collect::<Result<Vec<_>, _>>()?;
        if dims != t.shape() {
            return Err(NetError::Mismatch(format!(
                "tensor {i}: checkpoint shape {dims:?}, architecture shape {:?}",
                t.shape()
            )));
        }
        let raw = r.take(t.len() * 8, "tensor values")?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<(), NetError> {
    std::fs::write(path, to_bytes(model)?).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model, NetError> {
    let bytes = std::fs::read(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Load and require the stored architecture to equal `expected`.
pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Model, NetError> {
    let model = load(path)?;
    if model.config() != expected {
        return Err(NetError::Mismatch(format!(
            "{} was trained for a different architecture",
            path.display()
        )));
    }
    Ok(model)
}
