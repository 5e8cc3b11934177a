//! Core numerics for Jacobian-map morphometry.
//!
//! * [`volume`]: scalar volumes, NIfTI-1 I/O, trilinear sampling, resampling and
//!   the intensity-normalization / brain-masking stand-ins.
//! * [`registration`]: Mattes mutual information, affine and cubic B-spline
//!   free-form registration, displacement fields and warping.
//! * [`morphometry`]: Jacobian matrices, determinant maps and their
//!   expansion / compression classification.
//! * [`data`]: the synthetic mini-template, phantom generation, manifests,
//!   subject-level splits, SMOTE balancing and early fusion.

pub mod data;
pub mod morphometry;
pub mod registration;
pub mod volume;

pub use volume::{Geometry, LabelVolume, Volume, VolumeError};
