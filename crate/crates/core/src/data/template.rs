//! Built-in synthetic mini-template with a 12-region atlas.
//!
//! Geometry is defined in normalized coordinates `p ∈ [-1, 1]³`
//! (x: left→right, y: posterior→anterior, z: inferior→superior), so the
//! template can be rasterized at any grid size.

use std::collections::BTreeMap;

use crate::volume::{Geometry, LabelVolume, Volume};

/// Atlas region ids and names, in id order.
pub const REGIONS: [(u32, &str); 12] = [
    (1, "Frontal Lobe"),
    (2, "Parietal Lobe"),
    (3, "Occipital Lobe"),
    (4, "Temporal Lobe"),
    (5, "Limbic Lobe"),
    (6, "Sub-lobar"),
    (7, "Frontal-Temporal"),
    (8, "Midbrain"),
    (9, "Pons"),
    (10, "Medulla"),
    (11, "Anterior Lobe"),
    (12, "Posterior Lobe"),
];

/// Region shrunk in atrophic phantoms.
pub const ATROPHY_REGION: u32 = 5;

const BRAIN_RADII: [f64; 3] = [0.85, 0.9, 0.8];

/// Tissue intensity per region id (index 0 unused).
const MRI_LEVELS: [f64; 13] = [
    0.0, 0.62, 0.55, 0.48, 0.70, 0.88, 0.40, 0.78, 0.30, 0.36, 0.26, 0.66, 0.58,
];

const BLUR_SIGMA: f64 = 0.7;

/// Template MRI and CT images with their atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub mri: Volume,
    pub ct: Volume,
    pub atlas: LabelVolume,
}

fn ball(p: [f64; 3], c: [f64; 3], r: f64) -> bool {
    (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2) <= r * r
}

/// Atlas label at a normalized coordinate (0 outside the brain).
pub fn region_at(p: [f64; 3]) -> u32 {
    let e = (p[0] / BRAIN_RADII[0]).powi(2) + (p[1] / BRAIN_RADII[1]).powi(2) + (p[2] / BRAIN_RADII[2]).powi(2);
    if e > 1.0 {
        return 0;
    }
    let [x, y, z] = p;
    if ball(p, [0.0, 0.3, -0.15], 0.28) {
        5
    } else if ball(p, [0.0, -0.1, -0.1], 0.13) {
        8
    } else if ball(p, [0.0, -0.15, -0.35], 0.13) {
        9
    } else if ball(p, [0.0, -0.2, -0.58], 0.11) {
        10
    } else if ball(p, [0.0, 0.0, 0.15], 0.22) {
        6
    } else if y < -0.4 && z < -0.15 {
        if y > -0.68 {
            11
        } else {
            12
        }
    } else if x.abs() > 0.45 && z < 0.2 && y < 0.5 && y > -0.4 {
        if y > 0.1 {
            7
        } else {
            4
        }
    } else if y < -0.35 {
        3
    } else if y > 0.15 {
        1
    } else {
        2
    }
}

/// Smooth intra-region texture so that registration has gradients to follow.
fn texture(p: [f64; 3]) -> f64 {
    0.06 * (5.1 * p[0] + 1.3).sin() * (4.3 * p[1] - 0.4).cos() + 0.05 * (6.7 * p[2] + 2.1 * p[0]).sin()
}

fn normalized(dims: [usize; 3], x: usize, y: usize, z: usize) -> [f64; 3] {
    let n = |v: usize, d: usize| {
        if d > 1 {
            2.0 * v as f64 / (d - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    [n(x, dims[0]), n(y, dims[1]), n(z, dims[2])]
}

impl Template {
    /// Rasterize the mini-template on a unit-spacing grid.
    pub fn mini(dims: [usize; 3]) -> Self {
        let geometry = Geometry::unit(dims);
        let labels: Vec<u32> = (0..geometry.len())
            .map(|i| {
                let [x, y, z] = geometry.coords(i);
                region_at(normalized(dims, x, y, z))
            })
            .collect();
        let raw_mri: Vec<f64> = (0..geometry.len())
            .map(|i| {
                let l = labels[i];
                if l == 0 {
                    0.0
                } else {
                    let [x, y, z] = geometry.coords(i);
                    MRI_LEVELS[l as usize] + texture(normalized(dims, x, y, z))
                }
            })
            .collect();
        let raw_ct: Vec<f64> = raw_mri
            .iter()
            .zip(&labels)
            .map(|(&v, &l)| if l == 0 { 0.0 } else { ct_remap(v) })
            .collect();
        let mri = Volume::new(geometry.clone(), raw_mri)
            .expect("finite template")
            .gaussian_blur(BLUR_SIGMA);
        let ct = Volume::new(geometry.clone(), raw_ct)
            .expect("finite template")
            .gaussian_blur(BLUR_SIGMA);
        let names: BTreeMap<u32, String> = REGIONS.iter().map(|&(id, name)| (id, name.to_string())).collect();
        let atlas = LabelVolume::new(geometry, labels, names).expect("all regions named");
        Self { mri, ct, atlas }
    }

    pub fn geometry(&self) -> &Geometry {
        self.mri.geometry()
    }

    /// Brain mask (any nonzero atlas label).
    pub fn brain_mask(&self) -> Vec<bool> {
        self.atlas.foreground()
    }
}

/// Fixed MRI → CT tissue intensity map.
pub fn ct_remap(mri: f64) -> f64 {
    0.9 - 0.6 * mri
}
