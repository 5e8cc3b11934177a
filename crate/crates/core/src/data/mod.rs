//! Phantom corpus, manifests, subject-level splitting, SMOTE and early fusion.

mod manifest;
mod phantom;
mod sample;
mod smote;
mod split;
mod template;

pub use manifest::{cdr_to_class, ClassLabel, Manifest, Modality, Scan, Subject};
pub use phantom::{generate_phantom, Phantom, PhantomSpec, RadialShrink};
pub use sample::{fuse_early, standardize, Sample};
pub use smote::{interpolate, nearest_neighbors, smote_balance};
pub use split::{kfold, split_by_subject, Fold};
pub use template::{ct_remap, region_at, Template, ATROPHY_REGION, REGIONS};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown CDR value {0}")]
    UnknownCdr(f64),
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("subject `{0}` has no scans")]
    NoScans(String),
    #[error("need at least {k} subjects for {k} folds, have {subjects}")]
    TooFewSubjects { k: usize, subjects: usize },
    #[error("class {0} has a single sample; SMOTE needs two to interpolate")]
    SingletonClass(ClassLabel),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One subject of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub cdr: f64,
    pub spec: PhantomSpec,
}

/// Parameters of the default phantom corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub dims: [usize; 3],
    pub subjects_per_class: usize,
    /// Volumetric atrophy factor per class, CN to MOD.
    pub atrophy_factors: [f64; 4],
    pub noise_sigma: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            subjects_per_class: 12,
            atrophy_factors: [1.0, 0.92, 0.85, 0.75],
            noise_sigma: 0.02,
            jitter: 0.5,
            seed: 0,
        }
    }
}

/// Class-ordered corpus specs; MOD subjects alternate between CDR 2 and 3.
pub fn corpus(config: &CorpusConfig) -> Vec<CorpusEntry> {
    let cdrs = [0.0, 0.5, 1.0, 2.0];
    let mut out = Vec::new();
    for (c, class) in ClassLabel::ALL.iter().enumerate() {
        for i in 0..config.subjects_per_class {
            let cdr = if c == 3 && i % 2 == 1 { 3.0 } else { cdrs[c] };
            let n = out.len() as u64;
            out.push(CorpusEntry {
                id: format!("sub-{}{:02}", class.name().to_lowercase(), i),
                cdr,
                spec: PhantomSpec {
                    dims: config.dims,
                    seed: config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(n),
                    atrophy_region: ATROPHY_REGION,
                    atrophy_factor: config.atrophy_factors[c],
                    noise_sigma: config.noise_sigma,
                    jitter: config.jitter,
                },
            });
        }
    }
    out
}
