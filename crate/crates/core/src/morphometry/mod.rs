//! Jacobian matrices and determinant maps of displacement fields.
//!
//! The determinant is that of `∂φ/∂x = I + ∇v`, so 1 means no local volume
//! change, values below 1 compression and above 1 expansion.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::data::standardize;
use crate::registration::DisplacementField;
use crate::volume::{write_nifti, LabelVolume, NiftiError, Volume};

/// Local volume-change class. Discriminants are the on-disk label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JacobianClass {
    Compression = 0,
    NoChange = 1,
    Expansion = 2,
}

impl JacobianClass {
    pub fn classify(det: f64, tau: f64) -> Self {
        if (det - 1.0).abs() <= tau {
            JacobianClass::NoChange
        } else if det < 1.0 {
            JacobianClass::Compression
        } else {
            JacobianClass::Expansion
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JacobianOptions {
    /// `|det - 1| <= tau` counts as no change.
    pub tau: f64,
    /// Determinants are clamped to at least this before taking the log.
    pub epsilon: f64,
}

impl Default for JacobianOptions {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMap {
    pub det: Volume,
    pub logdet: Volume,
    pub class: Vec<JacobianClass>,
}

/// Which Jacobian volume feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Det,
    LogDet,
}

#[inline]
fn derivative(c: &Volume, idx: usize, coord: usize, n: usize, stride: usize) -> f64 {
    let d = c.data();
    if n == 1 {
        0.0
    } else if coord == 0 {
        d[idx + stride] - d[idx]
    } else if coord == n - 1 {
        d[idx] - d[idx - stride]
    } else {
        0.5 * (d[idx + stride] - d[idx - stride])
    }
}

/// `J[i][j] = ∂v_i/∂x_j` in voxel units: central differences inside,
/// one-sided differences on the faces.
pub fn jacobian_matrix(field: &DisplacementField, p: [usize; 3]) -> Matrix3<f64> {
    let dims = field.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let idx = field.geometry().index(p[0], p[1], p[2]);
    Matrix3::from_fn(|i, j| derivative(field.component(i), idx, p[j], dims[j], strides[j]))
}

/// The same matrix in millimetres: `S J S⁻¹` with `S = diag(spacing)`.
/// Its determinant plus identity equals that of the voxel-unit matrix.
pub fn jacobian_matrix_physical(field: &DisplacementField, p: [usize; 3]) -> Matrix3<f64> {
    let sp = field.geometry().spacing();
    let j = jacobian_matrix(field, p);
    Matrix3::from_fn(|r, c| j[(r, c)] * sp[r] / sp[c])
}

pub fn jacobian_map(field: &DisplacementField) -> JacobianMap {
    jacobian_map_with(field, JacobianOptions::default())
}

pub fn jacobian_map_with(field: &DisplacementField, options: JacobianOptions) -> JacobianMap {
    let g = field.geometry();
    let dets: Vec<f64> = (0..g.len())
        .map(|i| {
            let p = g.coords(i);
            (Matrix3::identity() + jacobian_matrix(field, p)).determinant()
        })
        .collect();
    let logs = dets.iter().map(|&d| d.max(options.epsilon).ln()).collect();
    let class = dets.iter().map(|&d| JacobianClass::classify(d, options.tau)).collect();
    JacobianMap {
        det: Volume::new(g.clone(), dets).expect("finite field gives finite determinants"),
        logdet: Volume::new(g.clone(), logs).expect("clamped log is finite"),
        class,
    }
}

impl JacobianMap {
    pub fn class_volume(&self) -> LabelVolume {
        let names = [(1, "nochange"), (2, "expansion")]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect();
        let labels = self.class.iter().map(|&c| c as u32).collect();
        LabelVolume::new(self.det.geometry().clone(), labels, names).expect("class labels are named")
    }

    /// Counts of (compression, no change, expansion).
    pub fn class_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for &c in &self.class {
            h[c as usize] += 1;
        }
        h
    }

    /// `Σ det · voxel volume` over voxels where `mask` holds.
    pub fn integral(&self, mask: &[bool]) -> f64 {
        let vv = self.det.geometry().voxel_volume();
        self.det
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d * vv)
            .sum()
    }

    /// Writes `<stem>_det.nii`, `<stem>_logdet.nii` and `<stem>_class.nii`
    /// (0/1/2 = compression/no change/expansion).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>, NiftiError> {
        let stem = stem.as_ref();
        let name = stem
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let path = |s: &str| stem.with_file_name(format!("{name}_{s}.nii"));
        let out = vec![path("det"), path("logdet"), path("class")];
        write_nifti(&self.det, &out[0])?;
        write_nifti(&self.logdet, &out[1])?;
        write_nifti(&self.class_volume().to_volume(), &out[2])?;
        Ok(out)
    }
}

/// The determinant (or log-determinant) standardized to zero mean and unit
/// variance over `mask`; zero outside it.
pub fn to_model_input(jmap: &JacobianMap, mode: InputMode, mask: Option<&[bool]>) -> Volume {
    let v = match mode {
        InputMode::Det => &jmap.det,
        InputMode::LogDet => &jmap.logdet,
    };
    standardize(v, mask)
}
