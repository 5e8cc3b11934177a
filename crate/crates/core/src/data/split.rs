//! Subject-level train/test splits and k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::DataError;

/// One cross-validation fold, as subject ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

/// Seeded shuffle followed by a stable sort by class, so that dealing the
/// result round-robin spreads every class evenly.
fn stratified_order(manifest: &Manifest, seed: u64) -> Result<Vec<usize>, DataError> {
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let classes = manifest
        .subjects
        .iter()
        .map(|s| s.class())
        .collect::<Result<Vec<_>, _>>()?;
    order.sort_by_key(|&i| classes[i]);
    Ok(order)
}

/// Split subjects into (train, test); every scan of a subject stays together.
pub fn split_by_subject(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), DataError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(DataError::Spec(format!(
            "test_fraction must be in [0, 1], got {test_fraction}"
        )));
    }
    let n = manifest.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    let pick = |idx: &[usize]| Manifest {
        subjects: idx.iter().map(|&i| manifest.subjects[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}

/// `k` folds at subject granularity; fold sizes differ by at most one and
/// classes are dealt evenly across folds.
pub fn kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    if k < 2 {
        return Err(DataError::Spec(format!("k must be >= 2, got {k}")));
    }
    if manifest.len() < k {
        return Err(DataError::TooFewSubjects {
            k,
            subjects: manifest.len(),
        });
    }
    let order = stratified_order(manifest, seed)?;
    let mut assignment = vec![0usize; manifest.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (mut validation, mut train) = (Vec::new(), Vec::new());
            for (i, s) in manifest.subjects.iter().enumerate() {
                if assignment[i] == f {
                    validation.push(s.id.clone());
                } else {
                    train.push(s.id.clone());
                }
            }
            Fold {
                index: f,
                train,
                validation,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Modality, Scan, Subject};

    fn manifest(n: usize) -> Manifest {
        Manifest::new(
            (0..n)
                .map(|i| Subject {
                    id: format!("s{i:02}"),
                    cdr: [0.0, 0.5, 1.0, 2.0][i % 4],
                    scans: vec![Scan {
                        modality: Modality::Mri,
                        path: String::new(),
                    }],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_subjects_five_folds_of_two() {
        let folds = kfold(&manifest(10), 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.validation.len() == 2 && f.train.len() == 8));
    }

    #[test]
    fn too_few_subjects() {
        assert!(matches!(
            kfold(&manifest(3), 5, 0),
            Err(DataError::TooFewSubjects { k: 5, subjects: 3 })
        ));
    }

    #[test]
    fn split_sizes() {
        let (train, test) = split_by_subject(&manifest(10), 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
    }
}
