//! Slice overlays: grayscale base image blended with a jet-coloured heatmap,
//! written as binary PPM (P6), with plain grayscale slices as PGM (P5).
//!
//! Pixel mapping per view, with `[W, H, D]` volume dims:
//!
//! | view     | fixed | image (width, height) | column | row       |
//! |----------|-------|-----------------------|--------|-----------|
//! | sagittal | x     | (D, H)                | z      | H − 1 − y |
//! | coronal  | y     | (W, D)                | x      | D − 1 − z |
//! | axial    | z     | (W, H)                | x      | H − 1 − y |

use std::path::{Path, PathBuf};

use jmap_core::Volume;

use crate::ExplainError;

/// Heatmap weight in the blend at full intensity.
const ALPHA: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Sagittal,
    Coronal,
    Axial,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Sagittal, Axis::Coronal, Axis::Axial];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
            Axis::Axial => "axial",
        }
    }

    /// Extent along the fixed axis.
    pub fn extent(self, dims: [usize; 3]) -> usize {
        match self {
            Axis::Sagittal => dims[0],
            Axis::Coronal => dims[1],
            Axis::Axial => dims[2],
        }
    }

    /// Image `(width, height)`.
    pub fn image_dims(self, [w, h, d]: [usize; 3]) -> (usize, usize) {
        match self {
            Axis::Sagittal => (d, h),
            Axis::Coronal => (w, d),
            Axis::Axial => (w, h),
        }
    }

    /// Voxel shown at pixel `(col, row)` of slice `index`.
    pub fn voxel(self, [_, h, d]: [usize; 3], index: usize, col: usize, row: usize) -> [usize; 3] {
        match self {
            Axis::Sagittal => [index, h - 1 - row, col],
            Axis::Coronal => [col, index, d - 1 - row],
            Axis::Axial => [col, h - 1 - row, index],
        }
    }
}

/// 8-bit RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Rgb {
    pub fn get(&self, col: usize, row: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// Jet colour map on `[0, 1]`.
fn jet(t: f64) -> [f64; 3] {
    let c = |o: f64| (1.5 - (4.0 * t - o).abs()).clamp(0.0, 1.0);
    [c(3.0), c(2.0), c(1.0)]
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Base intensities rescaled to `[0, 1]` over the whole volume.
fn gray_levels(base: &Volume) -> impl Fn(f64) -> f64 {
    let (lo, hi) = base.min_max();
    move |v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
}

fn check_slice(base: &Volume, axis: Axis, index: usize) -> Result<(), ExplainError> {
    let extent = axis.extent(base.dims());
    if index >= extent {
        return Err(ExplainError::SliceOutOfBounds { axis, index, extent });
    }
    Ok(())
}

/// Blend one slice: `(1 − αh)·gray + αh·jet(h)` per channel.
pub fn render_slice(base: &Volume, heat: &Volume, axis: Axis, index: usize) -> Result<Rgb, ExplainError> {
    if base.dims() != heat.dims() {
        return Err(ExplainError::Shape(format!(
            "base {:?} and heatmap {:?} differ",
            base.dims(),
            heat.dims()
        )));
    }
    check_slice(base, axis, index)?;
    let dims = base.dims();
    let (width, height) = axis.image_dims(dims);
    let gray = gray_levels(base);
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let [x, y, z] = axis.voxel(dims, index, col, row);
            let g = gray(base.get(x, y, z));
            let h = heat.get(x, y, z).clamp(0.0, 1.0);
            let a = ALPHA * h;
            let c = jet(h);
            pixels.push([0, 1, 2].map(|k| to_byte((1.0 - a) * g + a * c[k])));
        }
    }
    Ok(Rgb { width, height, pixels })
}

/// Grayscale slice as binary PGM.
pub fn slice_pgm(base: &Volume, axis: Axis, index: usize) -> Result<Vec<u8>, ExplainError> {
    check_slice(base, axis, index)?;
    let dims = base.dims();
    let (width, height) = axis.image_dims(dims);
    let gray = gray_levels(base);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in 0..height {
        for col in 0..width {
            let [x, y, z] = axis.voxel(dims, index, col, row);
            out.push(to_byte(gray(base.get(x, y, z))));
        }
    }
    Ok(out)
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf, ExplainError> {
    std::fs::write(&path, bytes).map_err(|source| ExplainError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write `<stem>_<view><index>.ppm` for every requested slice; all indices
/// are checked before anything is written.
pub fn overlay_slices(
    base: &Volume,
    heat: &Volume,
    axis: Axis,
    indices: &[usize],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, ExplainError> {
    let images = indices
        .iter()
        .map(|&i| render_slice(base, heat, axis, i))
        .collect::<Result<Vec<_>, _>>()?;
    images
        .iter()
        .zip(indices)
        .map(|(img, i)| write(dir.join(format!("{stem}_{}{i:03}.ppm", axis.name())), &img.to_ppm()))
        .collect()
}

/// Central slice of each view, plus the grayscale base of each as PGM.
pub fn three_views(base: &Volume, heat: &Volume, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, ExplainError> {
    let mut out = Vec::new();
    for axis in Axis::ALL {
        let mid = axis.extent(base.dims()) / 2;
        out.extend(overlay_slices(base, heat, axis, &[mid], dir, stem)?);
        out.push(write(
            dir.join(format!("{stem}_{}{mid:03}_base.pgm", axis.name())),
            &slice_pgm(base, axis, mid)?,
        )?);
    }
    Ok(out)
}
