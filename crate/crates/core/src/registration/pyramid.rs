//! Per-level metric samples shared by the affine and deformable stages.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::Volume;

use super::metric::HistogramMi;
use super::RegistrationConfig;

/// Smoothed images and the fixed-image sample lattice of one pyramid level.
pub(crate) struct Level {
    pub(crate) moving: Volume,
    /// Fixed-grid voxel coordinates of the metric samples.
    pub(crate) points: Vec<[f64; 3]>,
    pub(crate) metric: HistogramMi,
}

impl Level {
    pub(crate) fn new(fixed: &Volume, moving: &Volume, factor: usize, config: &RegistrationConfig) -> Self {
        let sigma = if factor > 1 { 0.5 * factor as f64 } else { 0.0 };
        let fixed_s = fixed.gaussian_blur(sigma);
        let moving_s = moving.gaussian_blur(sigma);
        let g = fixed.geometry();
        let dims = g.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (factor as u64).rotate_left(32));
        let mut lattice = Vec::new();
        for z in (0..dims[2]).step_by(factor) {
            for y in (0..dims[1]).step_by(factor) {
                for x in (0..dims[0]).step_by(factor) {
                    lattice.push([x, y, z]);
                }
            }
        }
        if config.sample_fraction < 1.0 {
            let keep = ((lattice.len() as f64 * config.sample_fraction).ceil() as usize).max(1);
            lattice.shuffle(&mut rng);
            lattice.truncate(keep);
            lattice.sort_by_key(|p| g.index(p[0], p[1], p[2]));
        }
        // Off-grid jitter: with samples on voxel centres, sub-voxel shifts of
        // a noisy moving image raise MI by interpolation smoothing alone.
        let points: Vec<[f64; 3]> = lattice
            .iter()
            .map(|p| {
                [0, 1, 2].map(|a| {
                    let hi = (dims[a] - 1) as f64;
                    (p[a] as f64 + rng.random_range(-0.5..0.5)).clamp(0.0, hi)
                })
            })
            .collect();
        let fixed_values: Vec<f64> = points.iter().map(|&p| fixed_s.sample_trilinear(p)).collect();
        let metric = HistogramMi::new(&fixed_values, moving_s.min_max(), config.bins, config.fixed_window);
        Self {
            moving: moving_s,
            points,
            metric,
        }
    }
}
