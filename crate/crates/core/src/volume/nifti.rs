//! Single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Writes always produce the minimal layout: 348-byte little-endian header,
//! four zero extension bytes, float32 voxels at offset 352, affine in the
//! sform rows. Reads accept float32, float64, uint8, int16 and int32 payloads in
//! either byte order; anything else is rejected with the offending field named.

use std::fs;
use std::path::Path;

use nalgebra::Matrix4;
use thiserror::Error;

use super::{Geometry, Volume, VolumeError};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sizeof_hdr: expected 348, found {0}")]
    HeaderSize(i32),
    #[error("bad magic: expected \"n+1\\0\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("datatype: unsupported code {0}")]
    UnsupportedDatatype(i16),
    #[error("bitpix: {bitpix} does not match datatype {datatype}")]
    Bitpix { datatype: i16, bitpix: i16 },
    #[error("dim[0]: expected 3 dimensions, found {0}")]
    DimCount(i16),
    #[error("dim[{axis}]: non-positive extent {value}")]
    BadDim { axis: usize, value: i16 },
    #[error("vox_offset: {0} is invalid")]
    VoxOffset(f32),
    #[error("truncated payload: need {expected} bytes after vox_offset, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("file shorter than the 348-byte header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("refusing to serialize: {0}")]
    InvalidVolume(#[from] VolumeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = write_nifti_bytes(volume)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    read_nifti_bytes(&bytes)
}

struct HeaderWriter {
    buf: Vec<u8>,
}

impl HeaderWriter {
    fn i16(&mut self, off: usize, v: i16) {
        self.buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, off: usize, v: i32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, off: usize, v: f32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
}

pub fn write_nifti_bytes(volume: &Volume) -> Result<Vec<u8>, NiftiError> {
    if let Some(i) = volume.data().iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::NonFinite(i).into());
    }
    let dims = volume.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::BadDim {
            axis: 1,
            value: i16::MAX,
        });
    }
    let mut h = HeaderWriter {
        buf: vec![0u8; VOX_OFFSET],
    };
    h.i32(0, HEADER_SIZE as i32);
    h.buf[38] = b'r';
    h.i16(40, 3);
    for (a, &d) in dims.iter().enumerate() {
        h.i16(42 + 2 * a, d as i16);
    }
    for a in 4..8 {
        h.i16(40 + 2 * a, 1);
    }
    h.i16(70, DT_FLOAT32);
    h.i16(72, 32);
    h.f32(76, 1.0);
    let spacing = volume.spacing();
    for (a, &s) in spacing.iter().enumerate() {
        h.f32(80 + 4 * a, s as f32);
    }
    for a in 4..8 {
        h.f32(76 + 4 * a, 1.0);
    }
    h.f32(108, VOX_OFFSET as f32);
    h.f32(112, 1.0);
    h.f32(116, 0.0);
    // xyzt_units: mm
    h.buf[123] = 2;
    h.i16(252, 0);
    h.i16(254, 1);
    let affine = volume.affine();
    for r in 0..3 {
        for c in 0..4 {
            h.f32(280 + 16 * r + 4 * c, affine[(r, c)] as f32);
        }
    }
    h.buf[344..348].copy_from_slice(MAGIC);

    let mut out = h.buf;
    out.reserve(volume.len() * 4);
    for &v in volume.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    buf: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[off..off + N]);
        if !self.little {
            a.reverse();
        }
        a
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.arr(off))
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.arr(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.arr(off))
    }
    fn f64(&self, off: usize) -> f64 {
        f64::from_le_bytes(self.arr(off))
    }
}

pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TruncatedHeader(bytes.len()));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let little = if le == HEADER_SIZE as i32 {
        true
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        false
    } else {
        return Err(NiftiError::HeaderSize(le));
    };
    let r = Reader { buf: bytes, little };

    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }
    let ndim = r.i16(40);
    if ndim != 3 {
        return Err(NiftiError::DimCount(ndim));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = r.i16(42 + 2 * a);
        if v <= 0 {
            return Err(NiftiError::BadDim { axis: a + 1, value: v });
        }
        *d = v as usize;
    }
    let datatype = r.i16(70);
    let bitpix = r.i16(72);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };
    if bitpix as usize != width * 8 {
        return Err(NiftiError::Bitpix { datatype, bitpix });
    }
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(NiftiError::VoxOffset(vox_offset));
    }
    let offset = vox_offset as usize;
    let count = dims[0] * dims[1] * dims[2];
    let needed = count * width;
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(NiftiError::Truncated {
            expected: needed,
            actual: available,
        });
    }

    let spacing = [r.f32(80).abs() as f64, r.f32(84).abs() as f64, r.f32(88).abs() as f64];
    let spacing = spacing.map(|s| if s > 0.0 { s } else { 1.0 });
    let sform_code = r.i16(254);
    let affine = if sform_code > 0 {
        let mut m = Matrix4::identity();
        for row in 0..3 {
            for c in 0..4 {
                m[(row, c)] = r.f32(280 + 16 * row + 4 * c) as f64;
            }
        }
        m
    } else {
        let mut m = Matrix4::identity();
        for a in 0..3 {
            m[(a, a)] = spacing[a];
        }
        m
    };

    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, inter)
    };

    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = offset + i * width;
        let raw = match datatype {
            DT_UINT8 => bytes[off] as f64,
            DT_INT16 => r.i16(off) as f64,
            DT_INT32 => r.i32(off) as f64,
            DT_FLOAT32 => r.f32(off) as f64,
            _ => r.f64(off),
        };
        data.push(raw * slope + inter);
    }
    let geometry = Geometry::new(dims, spacing, affine)?;
    Ok(Volume::new(geometry, data)?)
}
