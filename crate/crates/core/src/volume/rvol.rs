//! Raw debugging sidecar: 3×u32 dims, 3×f64 spacing, then f64 voxels, all
//! little-endian. Lossless, unlike NIfTI float32.

use std::fs;
use std::path::Path;

use super::{Geometry, NiftiError, Volume};

pub fn write_rvol(volume: &Volume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(12 + 24 + volume.len() * 8);
    for d in volume.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_rvol(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 36 {
        return Err(NiftiError::TruncatedHeader(bytes.len()));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[4 * a..4 * a + 4].try_into().unwrap()) as usize;
    }
    let mut spacing = [0.0; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f64::from_le_bytes(bytes[12 + 8 * a..20 + 8 * a].try_into().unwrap());
    }
    let count = dims.iter().product::<usize>();
    let payload = &bytes[36..];
    if payload.len() < count * 8 {
        return Err(NiftiError::Truncated {
            expected: count * 8,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(8)
        .take(count)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let geometry = Geometry::with_spacing(dims, spacing)?;
    Ok(Volume::new(geometry, data)?)
}
