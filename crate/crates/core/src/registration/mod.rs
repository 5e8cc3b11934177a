//! Affine and cubic B-spline registration driven by Mattes mutual information.
//!
//! The mapping φ takes fixed-image voxel coordinates to moving-image voxel
//! coordinates; a [`DisplacementField`] stores `v(x) = φ(x) - x` on the fixed
//! grid and [`warp`] pulls the moving image back through it:
//! `out(x) = moving(x + v(x))`.
//!
//! Both stages minimise `-MI + α · bending_energy` (the bending term vanishes
//! for affine maps) by steepest descent with a backtracking line search over a
//! Gaussian pyramid.

mod affine;
mod bspline;
mod deformable;
mod field;
mod io;
mod metric;
mod optimize;
mod pyramid;

pub use affine::{register_affine, AffineTransform};
pub use bspline::{bending_energy, BSplineTransform};
pub use deformable::{register_bspline, BSplineRegistration};
pub use field::{compose, invert, read_field, warp, warp_labels, write_field, DisplacementField};
pub use io::TransformTextError;
pub use metric::{
    cubic_bspline, cubic_bspline_derivative, mattes_mi, mi_from_joint, mutual_information, MiConfig, ParzenWindow,
};
pub use optimize::{Convergence, LevelReport, RegistrationReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{NiftiError, VolumeError};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("histogram needs at least 4 bins, got {0}")]
    Bins(usize),
    #[error("invalid registration config: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("affine matrix is singular (det = {0:e})")]
    SingularMatrix(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
}

/// Settings shared by the affine and deformable stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Weight of the bending-energy term.
    pub alpha: f64,
    pub bins: usize,
    /// Parzen window on the fixed-intensity axis. The moving axis is always
    /// cubic B-spline, which the analytic gradient needs. Smoothing both axes
    /// keeps the estimator closer to stationary at identity.
    pub fixed_window: ParzenWindow,
    /// Number of pyramid levels; level `l` (coarsest first) uses a sampling
    /// stride of `2^(levels-1-l)` voxels.
    pub pyramid_levels: usize,
    /// Maximum optimizer iterations per level for the deformable stage.
    pub iterations: usize,
    /// Maximum optimizer iterations per level for the affine stage.
    pub affine_iterations: usize,
    /// Initial step, as the largest parameter change in voxels.
    pub initial_step: f64,
    /// Line search gives up below this step.
    pub min_step: f64,
    /// B-spline control point spacing in voxels.
    pub control_spacing: f64,
    /// Fraction of lattice points used as metric samples (seeded subset).
    pub sample_fraction: f64,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            bins: 32,
            fixed_window: ParzenWindow::CubicBSpline,
            pyramid_levels: 3,
            iterations: 100,
            affine_iterations: 80,
            initial_step: 0.5,
            min_step: 1e-3,
            control_spacing: 8.0,
            sample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.bins < 4 {
            return Err(RegistrationError::Bins(self.bins));
        }
        let bad = |msg: &str| Err(RegistrationError::Config(msg.to_string()));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be finite and >= 0");
        }
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be >= 1");
        }
        if self.iterations == 0 || self.affine_iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.initial_step > 0.0) || !(self.min_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.control_spacing >= 1.0) {
            return bad("control_spacing must be >= 1 voxel");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction must be in (0, 1]");
        }
        Ok(())
    }

    /// Sampling strides, coarsest level first.
    pub(crate) fn pyramid_factors(&self) -> Vec<usize> {
        (0..self.pyramid_levels).rev().map(|l| 1usize << l).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pyramid_is_four_two_one() {
        let c = RegistrationConfig::default();
        c.validate().unwrap();
        assert_eq!(c.pyramid_factors(), vec![4, 2, 1]);
    }

    #[test]
    fn rejects_too_few_bins() {
        let c = RegistrationConfig {
            bins: 3,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(RegistrationError::Bins(3))));
    }
}
