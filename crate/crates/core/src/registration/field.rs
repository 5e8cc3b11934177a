//! Dense displacement fields, pull-back warping, inversion and composition.

use std::path::{Path, PathBuf};

use crate::volume::{read_nifti, write_nifti, Geometry, LabelVolume, Volume};

use super::RegistrationError;

/// `v(x) = φ(x) - x` in voxel units, one vector per fixed-grid voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    components: [Volume; 3],
}

impl DisplacementField {
    pub fn new(geometry: Geometry, vectors: Vec<[f64; 3]>) -> Result<Self, RegistrationError> {
        let comp = |a: usize| -> Result<Volume, RegistrationError> {
            Ok(Volume::new(geometry.clone(), vectors.iter().map(|v| v[a]).collect())?)
        };
        Ok(Self {
            components: [comp(0)?, comp(1)?, comp(2)?],
        })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let z = Volume::zeros(geometry);
        Self {
            components: [z.clone(), z.clone(), z],
        }
    }

    pub fn from_components(components: [Volume; 3]) -> Result<Self, RegistrationError> {
        let d = components[0].dims();
        for c in &components[1..] {
            if c.dims() != d {
                return Err(RegistrationError::DimMismatch(d, c.dims()));
            }
        }
        Ok(Self { components })
    }

    /// Field with `v(x) = f(x, y, z)`.
    pub fn from_fn(
        geometry: Geometry,
        mut f: impl FnMut(usize, usize, usize) -> [f64; 3],
    ) -> Result<Self, RegistrationError> {
        let vectors = (0..geometry.len())
            .map(|i| {
                let [x, y, z] = geometry.coords(i);
                f(x, y, z)
            })
            .collect();
        Self::new(geometry, vectors)
    }

    pub fn geometry(&self) -> &Geometry {
        self.components[0].geometry()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.components[0].dims()
    }

    pub fn len(&self) -> usize {
        self.components[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn component(&self, axis: usize) -> &Volume {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Volume; 3] {
        &self.components
    }

    #[inline]
    pub fn vector(&self, index: usize) -> [f64; 3] {
        [
            self.components[0].data()[index],
            self.components[1].data()[index],
            self.components[2].data()[index],
        ]
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vector(self.geometry().index(x, y, z))
    }

    /// Trilinear sample at a continuous coordinate, edge-replicated outside.
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.components[a].sample_clamped(p))
    }

    pub fn vectors(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.vector(i)).collect()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.vector(i))).fold(0.0, f64::max)
    }

    pub fn negated(&self) -> Self {
        Self {
            components: self.components.clone().map(|c| c.map(|v| -v).expect("finite")),
        }
    }

    /// Root-mean-square vector difference over voxels where `mask` is true
    /// (all voxels when `mask` is `None`).
    pub fn rmse(&self, other: &DisplacementField, mask: Option<&[bool]>) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let a = self.vector(i);
            let b = other.vector(i);
            sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}

#[inline]
fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `out(x) = moving(x + v(x))`, trilinear with zero padding, on the field's grid.
pub fn warp(moving: &Volume, field: &DisplacementField) -> Volume {
    let g = field.geometry();
    let data = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            let v = field.vector(i);
            moving.sample_trilinear([x as f64 + v[0], y as f64 + v[1], z as f64 + v[2]])
        })
        .collect();
    Volume::new(g.clone(), data).expect("trilinear samples of finite data are finite")
}

/// Nearest-neighbour pull-back of a label map (background outside).
pub fn warp_labels(labels: &LabelVolume, field: &DisplacementField) -> LabelVolume {
    let g = field.geometry();
    let src = labels.geometry();
    let data = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            let v = field.vector(i);
            let p = [
                (x as f64 + v[0]).round() as i64,
                (y as f64 + v[1]).round() as i64,
                (z as f64 + v[2]).round() as i64,
            ];
            if src.contains(p[0], p[1], p[2]) {
                labels.get(p[0] as usize, p[1] as usize, p[2] as usize)
            } else {
                0
            }
        })
        .collect();
    LabelVolume::new(g.clone(), data, labels.names().clone()).expect("labels come from the source")
}

/// Numerical inverse by fixed-point iteration `w(y) = -v(y + w(y))`.
///
/// Converges for fields whose Jacobian stays well away from folding
/// (`|∇v| < 1`); `iterations` of 20–50 is plenty for smooth fields.
pub fn invert(field: &DisplacementField, iterations: usize) -> DisplacementField {
    let g = field.geometry().clone();
    let mut w: Vec<[f64; 3]> = field.negated().vectors();
    for _ in 0..iterations {
        let next: Vec<[f64; 3]> = (0..g.len())
            .map(|i| {
                let [x, y, z] = g.coords(i);
                let wi = w[i];
                let v = field.sample([x as f64 + wi[0], y as f64 + wi[1], z as f64 + wi[2]]);
                [-v[0], -v[1], -v[2]]
            })
            .collect();
        let delta = next
            .iter()
            .zip(&w)
            .map(|(a, b)| norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
            .fold(0.0, f64::max);
        w = next;
        if delta < 1e-10 {
            break;
        }
    }
    DisplacementField::new(g, w).expect("finite iterates")
}

/// Field of `x ↦ φ₂(φ₁(x))` where `vᵢ = φᵢ - id`: `v₁(x) + v₂(x + v₁(x))`.
///
/// Warping by the result matches warping by `second`, then by `first`.
pub fn compose(first: &DisplacementField, second: &DisplacementField) -> DisplacementField {
    let g = first.geometry().clone();
    let vectors = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            let a = first.vector(i);
            let b = second.sample([x as f64 + a[0], y as f64 + a[1], z as f64 + a[2]]);
            [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
        })
        .collect();
    DisplacementField::new(g, vectors).expect("finite composition")
}

fn component_path(stem: &Path, suffix: &str) -> PathBuf {
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.with_file_name(format!("{name}_{suffix}.nii"))
}

/// Writes `<stem>_vx.nii`, `<stem>_vy.nii`, `<stem>_vz.nii`.
pub fn write_field(field: &DisplacementField, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>, RegistrationError> {
    let stem = stem.as_ref();
    let mut paths = Vec::with_capacity(3);
    for (a, suffix) in ["vx", "vy", "vz"].iter().enumerate() {
        let p = component_path(stem, suffix);
        write_nifti(field.component(a), &p)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn read_field(stem: impl AsRef<Path>) -> Result<DisplacementField, RegistrationError> {
    let stem = stem.as_ref();
    let vx = read_nifti(component_path(stem, "vx"))?;
    let vy = read_nifti(component_path(stem, "vy"))?;
    let vz = read_nifti(component_path(stem, "vz"))?;
    DisplacementField::from_components([vx, vy, vz])
}
