//! Model-ready samples and early fusion.

use serde::{Deserialize, Serialize};

use crate::volume::Volume;

use super::manifest::ClassLabel;
use super::DataError;

/// A channel-stacked input of shape `(C, D, H, W)`, stored W-fastest
/// (each channel in [`Volume`] order, channels concatenated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub channels: usize,
    /// `[W, H, D]`, as in [`Volume::dims`].
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub label: ClassLabel,
    pub subject_id: String,
    /// True for SMOTE-generated samples.
    #[serde(default)]
    pub synthetic: bool,
}

impl Sample {
    pub fn from_channels(
        channels: &[Volume],
        label: ClassLabel,
        subject_id: impl Into<String>,
    ) -> Result<Self, DataError> {
        let first = channels
            .first()
            .ok_or_else(|| DataError::Spec("sample needs at least one channel".into()))?;
        let dims = first.dims();
        let mut data = Vec::with_capacity(first.len() * channels.len());
        for c in channels {
            if c.dims() != dims {
                return Err(DataError::DimMismatch(dims, c.dims()));
            }
            data.extend_from_slice(c.data());
        }
        Ok(Self {
            channels: channels.len(),
            dims,
            data,
            label,
            subject_id: subject_id.into(),
            synthetic: false,
        })
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Shape as `(C, D, H, W)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.dims[2], self.dims[1], self.dims[0]]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Zero mean, unit variance over the voxels where `mask` holds (all voxels
/// when `None`); voxels outside the mask are set to 0. A constant region maps
/// to all zeros.
pub fn standardize(volume: &Volume, mask: Option<&[bool]>) -> Volume {
    let inside = |i: usize| mask.is_none_or(|m| m[i]);
    let data = volume.data();
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &v) in data.iter().enumerate() {
        if inside(i) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Volume::zeros(volume.geometry().clone());
    }
    let mean = sum / n as f64;
    let var = data
        .iter()
        .enumerate()
        .filter(|(i, _)| inside(*i))
        .map(|(_, &v)| (v - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let sd = var.sqrt();
    let out = data
        .iter()
        .enumerate()
        .map(|(i, &v)| if inside(i) && sd > 0.0 { (v - mean) / sd } else { 0.0 })
        .collect();
    volume.with_data(out).expect("standardized values are finite")
}

/// Stack `[MRI, CT]` as two channels, each standardized over the whole volume.
pub fn fuse_early(mri: &Volume, ct: &Volume) -> Result<Vec<Volume>, DataError> {
    if mri.dims() != ct.dims() {
        return Err(DataError::DimMismatch(mri.dims(), ct.dims()));
    }
    Ok(vec![standardize(mri, None), standardize(ct, None)])
}
