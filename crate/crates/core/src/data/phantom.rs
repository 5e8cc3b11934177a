//! Synthetic subjects: the template warped by a known deformation.
//!
//! The ground-truth map φ goes from template voxels to subject voxels. It is
//! the composition of a radial shrink centred on the atrophy region (uniform
//! scale `s^(1/3)` per axis over the whole region, blended smoothly back to
//! the identity) and an optional random B-spline "anatomy" jitter. Scans are
//! sampled as `template(φ⁻¹(y))`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::registration::{invert, warp, BSplineTransform, DisplacementField};
use crate::volume::{LabelVolume, Volume};

use super::template::{Template, ATROPHY_REGION};
use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub seed: u64,
    pub atrophy_region: u32,
    /// Volumetric shrink of the atrophy region, in (0, 1].
    pub atrophy_factor: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sigma: f64,
    /// Amplitude (voxels) of the random B-spline jitter; 0 disables it.
    pub jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            seed: 0,
            atrophy_region: ATROPHY_REGION,
            atrophy_factor: 1.0,
            noise_sigma: 0.0,
            jitter: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.atrophy_factor > 0.0 && self.atrophy_factor <= 1.0) {
            return Err(DataError::Spec(format!(
                "atrophy_factor must be in (0, 1], got {}",
                self.atrophy_factor
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter >= 0.0) {
            return Err(DataError::Spec("noise_sigma and jitter must be >= 0".into()));
        }
        if self.dims.iter().any(|&d| d < 4) {
            return Err(DataError::Spec(format!("dims too small: {:?}", self.dims)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub mri: Volume,
    pub ct: Volume,
    /// Atlas carried into subject space (nearest neighbour).
    pub labels: LabelVolume,
    /// Ground-truth `φ(x) - x` on the template grid.
    pub field: DisplacementField,
}

/// Radial profile of the shrink: `r ↦ f(r)` with `f(r) = k r` for `r ≤ r0`,
/// identity for `r ≥ r1`, and a cubic Hermite blend of the displacement in
/// between.
#[derive(Debug, Clone, Copy)]
pub struct RadialShrink {
    pub center: [f64; 3],
    pub k: f64,
    pub r0: f64,
    pub r1: f64,
}

impl RadialShrink {
    /// Shrink covering every voxel of `label` with a margin of one voxel.
    pub fn around_region(atlas: &LabelVolume, label: u32, factor: f64) -> Option<Self> {
        let g = atlas.geometry();
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (i, &l) in atlas.labels().iter().enumerate() {
            if l == label {
                let c = g.coords(i);
                for a in 0..3 {
                    sum[a] += c[a] as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let center = sum.map(|s| s / n as f64);
        let reach = atlas
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| {
                let c = g.coords(i);
                ((c[0] as f64 - center[0]).powi(2)
                    + (c[1] as f64 - center[1]).powi(2)
                    + (c[2] as f64 - center[2]).powi(2))
                .sqrt()
            })
            .fold(0.0, f64::max);
        let r0 = reach + 1.0;
        Some(Self {
            center,
            k: factor.cbrt(),
            r0,
            r1: r0 + r0.max(4.0),
        })
    }

    /// Radial displacement `f(r) - r`.
    fn offset(&self, r: f64) -> f64 {
        let d0 = -(1.0 - self.k) * self.r0;
        let m0 = -(1.0 - self.k);
        if r <= self.r0 {
            -(1.0 - self.k) * r
        } else if r >= self.r1 {
            0.0
        } else {
            let h = self.r1 - self.r0;
            let t = (r - self.r0) / h;
            let h00 = 2.0 * t * t * t - 3.0 * t * t + 1.0;
            let h10 = t * t * t - 2.0 * t * t + t;
            h00 * d0 + h10 * h * m0
        }
    }

    fn profile(&self, r: f64) -> f64 {
        r + self.offset(r)
    }

    /// `f⁻¹(ρ)` by bisection (f is strictly increasing).
    fn inverse_profile(&self, rho: f64) -> f64 {
        if rho <= self.k * self.r0 {
            return rho / self.k;
        }
        if rho >= self.r1 {
            return rho;
        }
        let (mut lo, mut hi) = (self.r0, self.r1);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.profile(mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn radial(&self, p: [f64; 3], f: impl Fn(f64) -> f64) -> [f64; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r == 0.0 {
            return p;
        }
        let s = f(r) / r;
        [
            self.center[0] + s * d[0],
            self.center[1] + s * d[1],
            self.center[2] + s * d[2],
        ]
    }

    /// Template → subject.
    pub fn forward(&self, p: [f64; 3]) -> [f64; 3] {
        self.radial(p, |r| self.profile(r))
    }

    /// Subject → template.
    pub fn inverse(&self, p: [f64; 3]) -> [f64; 3] {
        self.radial(p, |r| self.inverse_profile(r))
    }
}

/// Sub-voxel samples per axis when pulling the atlas into subject space.
const LABEL_SUPERSAMPLING: usize = 3;

/// Majority label over a `n³` sub-voxel lattice, each sample mapped through
/// `psi` and read nearest-neighbour. Plain nearest-neighbour pulls at voxel
/// centres alias badly for small regions: a mild expansion about a
/// half-voxel centre maps distinct voxels to distinct voxels, so a shrunken
/// region loses almost no voxels. Ties go to the centre sample's label.
fn supersampled_labels(atlas: &LabelVolume, psi: impl Fn([f64; 3]) -> [f64; 3]) -> LabelVolume {
    let g = atlas.geometry();
    let n = LABEL_SUPERSAMPLING;
    let offsets: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
    let lookup = |p: [f64; 3]| {
        let q = p.map(|c| c.round() as i64);
        if g.contains(q[0], q[1], q[2]) {
            atlas.get(q[0] as usize, q[1] as usize, q[2] as usize)
        } else {
            0
        }
    };
    let data = (0..g.len())
        .map(|i| {
            let c = g.coords(i).map(|v| v as f64);
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for &dz in &offsets {
                for &dy in &offsets {
                    for &dx in &offsets {
                        *votes.entry(lookup(psi([c[0] + dx, c[1] + dy, c[2] + dz]))).or_default() += 1;
                    }
                }
            }
            let best = votes.values().copied().max().unwrap_or(0);
            let centre = lookup(psi(c));
            if votes.get(&centre) == Some(&best) {
                centre
            } else {
                votes.into_iter().find(|&(_, v)| v == best).map_or(0, |(l, _)| l)
            }
        })
        .collect();
    LabelVolume::new(g.clone(), data, atlas.names().clone()).expect("labels come from the atlas")
}

/// Warp the template into a synthetic subject.
pub fn generate_phantom(spec: &PhantomSpec, template: &Template) -> Result<Phantom, DataError> {
    spec.validate()?;
    let g = template.geometry().clone();
    if g.dims() != spec.dims {
        return Err(DataError::DimMismatch(g.dims(), spec.dims));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let shrink = if spec.atrophy_factor < 1.0 {
        Some(
            RadialShrink::around_region(&template.atlas, spec.atrophy_region, spec.atrophy_factor).ok_or(
                DataError::Spec(format!("atrophy region {} is empty", spec.atrophy_region)),
            )?,
        )
    } else {
        None
    };

    // jitter displacement, defined on subject space: ψ_jit(y) = y + u(y)
    let jitter_transform = if spec.jitter > 0.0 {
        let mut t = BSplineTransform::zeros(g.dims(), [8.0; 3]).expect("positive spacing");
        for c in t.coefficients_mut() {
            for v in c.iter_mut() {
                *v = rng.random_range(-spec.jitter..=spec.jitter);
            }
        }
        Some(t)
    } else {
        None
    };
    let jitter = jitter_transform.as_ref().map(|t| t.to_field(&g));
    // ψ at an arbitrary subject-space point
    let psi = |y: [f64; 3]| {
        let mut q = y;
        if let Some(t) = &jitter_transform {
            let u = t.displacement(y);
            q = [q[0] + u[0], q[1] + u[1], q[2] + u[2]];
        }
        match &shrink {
            Some(s) => s.inverse(q),
            None => q,
        }
    };

    // ψ = φ⁻¹ (subject → template) as a displacement field on the subject grid
    let inverse_field = DisplacementField::from_fn(g.clone(), |x, y, z| {
        let mut q = [x as f64, y as f64, z as f64];
        if let Some(j) = &jitter {
            let u = j.at(x, y, z);
            q = [q[0] + u[0], q[1] + u[1], q[2] + u[2]];
        }
        if let Some(s) = &shrink {
            q = s.inverse(q);
        }
        [q[0] - x as f64, q[1] - y as f64, q[2] - z as f64]
    })
    .expect("finite map");

    // φ = ψ_jit⁻¹ ∘ φ_atr on the template grid
    let jitter_inverse = jitter.as_ref().map(|j| invert(j, 50));
    let field = DisplacementField::from_fn(g.clone(), |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let mut q = match &shrink {
            Some(s) => s.forward(p),
            None => p,
        };
        if let Some(w) = &jitter_inverse {
            let d = w.sample(q);
            q = [q[0] + d[0], q[1] + d[1], q[2] + d[2]];
        }
        [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
    })
    .expect("finite map");

    let mut mri = warp(&template.mri, &inverse_field);
    let mut ct = warp(&template.ct, &inverse_field);
    let labels = if shrink.is_some() || jitter_transform.is_some() {
        supersampled_labels(&template.atlas, psi)
    } else {
        template.atlas.clone()
    };
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        let noisy = |v: &Volume, rng: &mut ChaCha8Rng| {
            let data = v.data().iter().map(|&x| x + normal.sample(rng)).collect();
            v.with_data(data).expect("finite noise")
        };
        mri = noisy(&mri, &mut rng);
        ct = noisy(&ct, &mut rng);
    }
    Ok(Phantom { mri, ct, labels, field })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_profile_is_invertible() {
        let s = RadialShrink {
            center: [10.0, 11.0, 12.0],
            k: 0.85,
            r0: 4.5,
            r1: 9.0,
        };
        for i in 0..200 {
            let r = i as f64 * 0.07;
            let back = s.inverse_profile(s.profile(r));
            assert!((back - r).abs() < 1e-10, "{r} -> {back}");
        }
        let p = [13.1, 9.4, 15.7];
        let q = s.inverse(s.forward(p));
        assert!(p.iter().zip(q).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn profile_is_monotone_for_strong_shrink() {
        let s = RadialShrink {
            center: [0.0; 3],
            k: 0.5f64.cbrt(),
            r0: 5.0,
            r1: 10.0,
        };
        let mut prev = -1.0;
        for i in 0..1500 {
            let f = s.profile(i as f64 * 0.01);
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn neutral_spec_reproduces_template() {
        let t = Template::mini([16, 16, 16]);
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            ..Default::default()
        };
        let p = generate_phantom(&spec, &t).unwrap();
        assert_eq!(p.mri, t.mri);
        assert_eq!(p.ct, t.ct);
        assert_eq!(p.field.max_norm(), 0.0);
    }
}
