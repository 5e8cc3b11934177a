//! Scalar volumes on a regular grid.
//!
//! Every image, map and heatmap in the toolkit is a [`Volume`]: a dense `f64`
//! grid with voxel spacing and a grid-to-world affine. Storage order is
//! x-fastest (`index = x + W * (y + H * z)`), the same order NIfTI uses on disk.

mod nifti;
mod preprocess;
mod rvol;

pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes, NiftiError};
pub use preprocess::{
    mask_brain, normalize_intensity, normalize_intensity_with, otsu_threshold, percentile, MaskThreshold,
    PercentileClip,
};
pub use rvol::{read_rvol, write_rvol};

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dims must be positive, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("data length {actual} does not match dims product {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("spacing must be strictly positive, got {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("affine upper-left 3x3 block is singular")]
    SingularAffine,
    #[error("non-finite value at voxel index {0}")]
    NonFinite(usize),
    #[error("geometry mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("label {0} has no region name")]
    UnnamedLabel(u32),
}

/// Grid geometry shared by volumes, label maps and displacement fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Matrix4<f64>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::EmptyDims(dims));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::NonPositiveSpacing(spacing));
        }
        let upper = affine.fixed_view::<3, 3>(0, 0).into_owned();
        if !affine.iter().all(|v| v.is_finite()) || upper.determinant().abs() <= 1e-12 {
            return Err(VolumeError::SingularAffine);
        }
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned grid with the origin at voxel (0, 0, 0).
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, VolumeError> {
        let affine = Matrix4::from_diagonal(&Vector4::new(spacing[0], spacing[1], spacing[2], 1.0));
        Self::new(dims, spacing, affine)
    }

    /// Unit-spacing, identity-affine grid.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::with_spacing(dims, [1.0; 3]).expect("unit geometry requires positive dims")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let yz = index / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.dims[0]
            && (y as usize) < self.dims[1]
            && (z as usize) < self.dims[2]
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.affine * Vector4::new(p[0], p[1], p[2], 1.0);
        [w[0], w[1], w[2]]
    }

    pub fn world_to_voxel(&self, w: [f64; 3]) -> [f64; 3] {
        let inv = self.affine.try_inverse().expect("affine validated as nonsingular");
        let p = inv * Vector4::new(w[0], w[1], w[2], 1.0);
        [p[0], p[1], p[2]]
    }

    /// Geometric centre of the grid in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ]
    }

    /// Grid covering the same physical extent with new dims and spacing.
    ///
    /// Voxel `j` of the new grid sits at source coordinate
    /// `(j + 0.5) * new_spacing / old_spacing - 0.5` along each axis.
    pub fn regridded(
        &self,
        dims: [usize; 3],
        spacing: [f64; 3],
    ) -> Result<(Geometry, [f64; 3], [f64; 3]), VolumeError> {
        let mut scale = [0.0; 3];
        let mut offset = [0.0; 3];
        for a in 0..3 {
            scale[a] = spacing[a] / self.spacing[a];
            offset[a] = 0.5 * scale[a] - 0.5;
        }
        let mut step = Matrix4::identity();
        for a in 0..3 {
            step[(a, a)] = scale[a];
            step[(a, 3)] = offset[a];
        }
        let geometry = Geometry::new(dims, spacing, self.affine * step)?;
        Ok((geometry, scale, offset))
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }
}

/// A 3-D scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != geometry.len() {
            return Err(VolumeError::DataLength {
                expected: geometry.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let data = vec![0.0; geometry.len()];
        Self { geometry, data }
    }

    pub fn filled(geometry: Geometry, value: f64) -> Result<Self, VolumeError> {
        let data = vec![value; geometry.len()];
        Self::new(geometry, data)
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self, VolumeError> {
        let [w, h, d] = geometry.dims();
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.geometry.affine
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Value at integer coordinates, zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64, z: i64) -> f64 {
        if self.geometry.contains(x, y, z) {
            self.get(x as usize, y as usize, z as usize)
        } else {
            0.0
        }
    }

    /// Same geometry, new data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.geometry.clone(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, VolumeError> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Trilinear interpolation at a continuous voxel coordinate.
    ///
    /// Neighbours outside the grid contribute zero.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let [w, h, d] = self.geometry.dims;
        let fx = p[0].floor();
        let fy = p[1].floor();
        let fz = p[2].floor();
        if !(fx.is_finite() && fy.is_finite() && fz.is_finite()) {
            return 0.0;
        }
        if fx < -1.0 || fy < -1.0 || fz < -1.0 || fx >= w as f64 || fy >= h as f64 || fz >= d as f64 {
            return 0.0;
        }
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        let (tx, ty, tz) = (p[0] - fx, p[1] - fy, p[2] - fz);
        let interior =
            x0 >= 0 && y0 >= 0 && z0 >= 0 && (x0 as usize) + 1 < w && (y0 as usize) + 1 < h && (z0 as usize) + 1 < d;
        let c = if interior {
            let i = self.geometry.index(x0 as usize, y0 as usize, z0 as usize);
            let sy = w;
            let sz = w * h;
            [
                self.data[i],
                self.data[i + 1],
                self.data[i + sy],
                self.data[i + sy + 1],
                self.data[i + sz],
                self.data[i + sz + 1],
                self.data[i + sz + sy],
                self.data[i + sz + sy + 1],
            ]
        } else {
            [
                self.get_or_zero(x0, y0, z0),
                self.get_or_zero(x0 + 1, y0, z0),
                self.get_or_zero(x0, y0 + 1, z0),
                self.get_or_zero(x0 + 1, y0 + 1, z0),
                self.get_or_zero(x0, y0, z0 + 1),
                self.get_or_zero(x0 + 1, y0, z0 + 1),
                self.get_or_zero(x0, y0 + 1, z0 + 1),
                self.get_or_zero(x0 + 1, y0 + 1, z0 + 1),
            ]
        };
        let c00 = c[0] + tx * (c[1] - c[0]);
        let c10 = c[2] + tx * (c[3] - c[2]);
        let c01 = c[4] + tx * (c[5] - c[4]);
        let c11 = c[6] + tx * (c[7] - c[6]);
        let c0 = c00 + ty * (c10 - c00);
        let c1 = c01 + ty * (c11 - c01);
        c0 + tz * (c1 - c0)
    }

    /// Trilinear value and its exact gradient with respect to `p`.
    ///
    /// The gradient is the derivative of the interpolant inside the enclosing
    /// cell, so it is consistent with finite differences of
    /// [`Volume::sample_trilinear`] away from cell faces.
    pub fn sample_with_gradient(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let [w, h, d] = self.geometry.dims;
        let fx = p[0].floor();
        let fy = p[1].floor();
        let fz = p[2].floor();
        if !(fx.is_finite() && fy.is_finite() && fz.is_finite())
            || fx < -1.0
            || fy < -1.0
            || fz < -1.0
            || fx >= w as f64
            || fy >= h as f64
            || fz >= d as f64
        {
            return (0.0, [0.0; 3]);
        }
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        let (tx, ty, tz) = (p[0] - fx, p[1] - fy, p[2] - fz);
        let c000 = self.get_or_zero(x0, y0, z0);
        let c100 = self.get_or_zero(x0 + 1, y0, z0);
        let c010 = self.get_or_zero(x0, y0 + 1, z0);
        let c110 = self.get_or_zero(x0 + 1, y0 + 1, z0);
        let c001 = self.get_or_zero(x0, y0, z0 + 1);
        let c101 = self.get_or_zero(x0 + 1, y0, z0 + 1);
        let c011 = self.get_or_zero(x0, y0 + 1, z0 + 1);
        let c111 = self.get_or_zero(x0 + 1, y0 + 1, z0 + 1);

        let c00 = c000 + tx * (c100 - c000);
        let c10 = c010 + tx * (c110 - c010);
        let c01 = c001 + tx * (c101 - c001);
        let c11 = c011 + tx * (c111 - c011);
        let c0 = c00 + ty * (c10 - c00);
        let c1 = c01 + ty * (c11 - c01);
        let value = c0 + tz * (c1 - c0);

        let dx0 = (c100 - c000) + ty * ((c110 - c010) - (c100 - c000));
        let dx1 = (c101 - c001) + ty * ((c111 - c011) - (c101 - c001));
        let gx = dx0 + tz * (dx1 - dx0);
        let gy = (c10 - c00) + tz * ((c11 - c01) - (c10 - c00));
        let gz = c1 - c0;
        (value, [gx, gy, gz])
    }

    /// Trilinear interpolation with coordinates clamped to the grid
    /// (edge replication instead of zero padding).
    pub fn sample_clamped(&self, p: [f64; 3]) -> f64 {
        let dims = self.geometry.dims;
        let q = [
            p[0].clamp(0.0, (dims[0] - 1) as f64),
            p[1].clamp(0.0, (dims[1] - 1) as f64),
            p[2].clamp(0.0, (dims[2] - 1) as f64),
        ];
        self.sample_trilinear(q)
    }

    /// Resample onto a grid with the same physical extent.
    ///
    /// Sample positions are clamped to the source grid, so constants stay
    /// constant up to the border.
    pub fn resample(&self, target_dims: [usize; 3], target_spacing: [f64; 3]) -> Result<Volume, VolumeError> {
        if target_dims == self.dims() && target_spacing == self.spacing() {
            return Ok(self.clone());
        }
        let (geometry, scale, offset) = self.geometry.regridded(target_dims, target_spacing)?;
        Volume::from_fn(geometry, |x, y, z| {
            self.sample_clamped([
                x as f64 * scale[0] + offset[0],
                y as f64 * scale[1] + offset[1],
                z as f64 * scale[2] + offset[2],
            ])
        })
    }

    /// Resample to `target_dims` keeping the physical extent (spacing follows).
    pub fn resample_to_dims(&self, target_dims: [usize; 3]) -> Result<Volume, VolumeError> {
        let extent = self.extent();
        let spacing = [
            extent[0] / target_dims[0] as f64,
            extent[1] / target_dims[1] as f64,
            extent[2] / target_dims[2] as f64,
        ];
        self.resample(target_dims, spacing)
    }

    pub fn extent(&self) -> [f64; 3] {
        let dims = self.dims();
        let sp = self.spacing();
        [dims[0] as f64 * sp[0], dims[1] as f64 * sp[1], dims[2] as f64 * sp[2]]
    }

    /// Separable Gaussian smoothing with `sigma` in voxels (edge replication).
    pub fn gaussian_blur(&self, sigma: f64) -> Volume {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= norm);

        let dims = self.dims();
        let mut cur = self.data.clone();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..3 {
            let n = dims[axis] as i64;
            let stride = match axis {
                0 => 1,
                1 => dims[0],
                _ => dims[0] * dims[1],
            };
            for (i, out) in next.iter_mut().enumerate() {
                let c = self.geometry.coords(i)[axis] as i64;
                let base = i - c as usize * stride;
                let mut acc = 0.0;
                for (k, &wk) in kernel.iter().enumerate() {
                    let j = (c + k as i64 - radius).clamp(0, n - 1) as usize;
                    acc += wk * cur[base + j * stride];
                }
                *out = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Volume {
            geometry: self.geometry.clone(),
            data: cur,
        }
    }
}

/// Integer label map with region names (label 0 is background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    labels: Vec<u32>,
    names: BTreeMap<u32, String>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, labels: Vec<u32>, names: BTreeMap<u32, String>) -> Result<Self, VolumeError> {
        if labels.len() != geometry.len() {
            return Err(VolumeError::DataLength {
                expected: geometry.len(),
                actual: labels.len(),
            });
        }
        if let Some(&missing) = labels.iter().find(|&&l| l != 0 && !names.contains_key(&l)) {
            return Err(VolumeError::UnnamedLabel(missing));
        }
        Ok(Self {
            geometry,
            labels,
            names,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn names(&self) -> &BTreeMap<u32, String> {
        &self.names
    }

    pub fn name(&self, label: u32) -> Option<&str> {
        self.names.get(&label).map(String::as_str)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.geometry.index(x, y, z)]
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Binary mask (1.0 where the label is nonzero).
    pub fn foreground(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            geometry: self.geometry.clone(),
            data: self.labels.iter().map(|&l| l as f64).collect(),
        }
    }

    /// Round a float volume back to labels, keeping `names` for the labels present.
    pub fn from_volume(volume: &Volume, names: BTreeMap<u32, String>) -> Result<Self, VolumeError> {
        let labels = volume.data().iter().map(|&v| v.round().max(0.0) as u32).collect();
        Self::new(volume.geometry().clone(), labels, names)
    }

    /// Replace labels via `f`, keeping the geometry. Names are supplied anew.
    pub fn relabel(&self, f: impl Fn(u32) -> u32, names: BTreeMap<u32, String>) -> Result<Self, VolumeError> {
        Self::new(
            self.geometry.clone(),
            self.labels.iter().map(|&l| f(l)).collect(),
            names,
        )
    }
}

/// Serializable description of a geometry, used in text sidecars.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometryRecord {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: [[f64; 4]; 4],
}

impl From<&Geometry> for GeometryRecord {
    fn from(g: &Geometry) -> Self {
        let mut affine = [[0.0; 4]; 4];
        for (r, row) in affine.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = g.affine[(r, c)];
            }
        }
        Self {
            dims: g.dims,
            spacing: g.spacing,
            affine,
        }
    }
}

impl TryFrom<&GeometryRecord> for Geometry {
    type Error = VolumeError;

    fn try_from(r: &GeometryRecord) -> Result<Self, Self::Error> {
        let affine = Matrix4::from_fn(|i, j| r.affine[i][j]);
        Geometry::new(r.dims, r.spacing, affine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(Geometry::unit(dims), |x, y, z| {
            2.0 * x as f64 + 3.0 * y as f64 - z as f64
        })
        .unwrap()
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        let g = Geometry::unit([2, 2, 2]);
        assert!(matches!(
            Volume::new(g.clone(), vec![0.0; 7]),
            Err(VolumeError::DataLength { .. })
        ));
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert_eq!(Volume::new(g, data), Err(VolumeError::NonFinite(3)));
        assert!(Geometry::with_spacing([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        let mut singular = Matrix4::identity();
        singular[(2, 2)] = 0.0;
        assert_eq!(
            Geometry::new([2, 2, 2], [1.0; 3], singular),
            Err(VolumeError::SingularAffine)
        );
    }

    #[test]
    fn trilinear_hits_nodes_and_midpoints() {
        let v = ramp([5, 4, 3]);
        assert_eq!(v.sample_trilinear([2.0, 1.0, 1.0]), v.get(2, 1, 1));
        let g = Geometry::unit([2, 1, 1]);
        let two = Volume::new(g, vec![0.0, 1.0]).unwrap();
        assert_eq!(two.sample_trilinear([0.5, 0.0, 0.0]), 0.5);
    }

    #[test]
    fn trilinear_zero_pads_outside() {
        let v = Volume::filled(Geometry::unit([3, 3, 3]), 2.0).unwrap();
        assert_eq!(v.sample_trilinear([-1.0, 1.0, 1.0]), 0.0);
        assert_eq!(v.sample_trilinear([-0.5, 1.0, 1.0]), 1.0);
        assert_eq!(v.sample_trilinear([2.5, 1.0, 1.0]), 1.0);
        assert_eq!(v.sample_trilinear([10.0, 1.0, 1.0]), 0.0);
    }

    proptest! {
        #[test]
        fn trilinear_reproduces_linear_fields(
            x in 0.0f64..7.0, y in 0.0f64..5.0, z in 0.0f64..4.0
        ) {
            let v = ramp([8, 6, 5]);
            let expected = 2.0 * x + 3.0 * y - z;
            prop_assert!((v.sample_trilinear([x, y, z]) - expected).abs() < 1e-12);
        }

        #[test]
        fn trilinear_is_bounded_by_neighbours(
            seed in any::<u64>(), x in 0.0f64..3.0, y in 0.0f64..3.0, z in 0.0f64..3.0
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = Volume::from_fn(Geometry::unit([4, 4, 4]), |_, _, _| rng.random::<f64>()).unwrap();
            let (x0, y0, z0) = (x.floor() as usize, y.floor() as usize, z.floor() as usize);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dz in 0..2 { for dy in 0..2 { for dx in 0..2 {
                let c = v.get(x0 + dx, y0 + dy, z0 + dz);
                lo = lo.min(c); hi = hi.max(c);
            }}}
            let s = v.sample_trilinear([x, y, z]);
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = Volume::from_fn(Geometry::unit([6, 6, 6]), |x, y, z| {
            ((x * 7 + y * 3 + z * 5) % 11) as f64
        })
        .unwrap();
        let p = [2.3, 1.7, 3.4];
        let (val, g) = v.sample_with_gradient(p);
        assert!((val - v.sample_trilinear(p)).abs() < 1e-12);
        let h = 1e-6;
        for a in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let fd = (v.sample_trilinear(pp) - v.sample_trilinear(pm)) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", g[a]);
        }
    }

    #[test]
    fn resample_identity_and_constants() {
        let v = ramp([6, 6, 6]);
        assert_eq!(v.resample([6, 6, 6], [1.0; 3]).unwrap(), v);
        let c = Volume::filled(Geometry::unit([6, 5, 4]), 3.25).unwrap();
        let r = c.resample([9, 3, 7], [0.6, 1.7, 0.5]).unwrap();
        assert!(r.data().iter().all(|&x| (x - 3.25).abs() < 1e-12));
    }

    #[test]
    fn downsampling_doubles_ramp_step() {
        let v = Volume::from_fn(Geometry::unit([8, 8, 8]), |x, _, _| 0.5 * x as f64 + 1.0).unwrap();
        let r = v.resample([4, 8, 8], [2.0, 1.0, 1.0]).unwrap();
        for x in 0..3 {
            let step = r.get(x + 1, 3, 3) - r.get(x, 3, 3);
            assert!((step - 1.0).abs() < 1e-12);
        }
        // voxel 0 of the coarse grid is centred between source voxels 0 and 1
        assert!((r.get(0, 0, 0) - 1.25).abs() < 1e-12);
        let w0 = r.geometry().voxel_to_world([0.0, 0.0, 0.0]);
        assert!((w0[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constants_and_mass_center() {
        let c = Volume::filled(Geometry::unit([5, 5, 5]), 1.5).unwrap();
        let b = c.gaussian_blur(1.2);
        assert!(b.data().iter().all(|&x| (x - 1.5).abs() < 1e-12));
    }

    #[test]
    fn label_volume_requires_names() {
        let g = Geometry::unit([2, 1, 1]);
        let mut names = BTreeMap::new();
        assert_eq!(
            LabelVolume::new(g.clone(), vec![0, 3], names.clone()),
            Err(VolumeError::UnnamedLabel(3))
        );
        names.insert(3, "x".to_string());
        let lv = LabelVolume::new(g, vec![0, 3], names).unwrap();
        assert_eq!(lv.count(3), 1);
    }
}
