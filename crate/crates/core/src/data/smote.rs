//! Synthetic minority oversampling on flattened model inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::ClassLabel;
use super::sample::Sample;
use super::DataError;

/// `x + λ (neighbor - x)`.
pub fn interpolate(x: &[f64], neighbor: &[f64], lambda: f64) -> Vec<f64> {
    x.iter().zip(neighbor).map(|(&a, &b)| a + lambda * (b - a)).collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest points to `points[i]` (excluding `i`), nearest
/// first, ties broken by index.
pub fn nearest_neighbors(points: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (squared_distance(points[i], p), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Upsample every minority class to the majority count.
///
/// Originals are returned first, unmodified and in input order, followed by
/// the synthetic samples class by class. Base points are visited round-robin;
/// the neighbour and `λ ~ U(0, 1)` are drawn from a single seeded stream.
pub fn smote_balance(samples: &[Sample], k_neighbors: usize, seed: u64) -> Result<Vec<Sample>, DataError> {
    if k_neighbors == 0 {
        return Err(DataError::Spec("k_neighbors must be >= 1".into()));
    }
    if let Some(first) = samples.first() {
        for s in samples {
            if s.dims != first.dims || s.channels != first.channels {
                return Err(DataError::DimMismatch(first.dims, s.dims));
            }
        }
    }
    let members: Vec<Vec<usize>> = ClassLabel::ALL
        .iter()
        .map(|&c| (0..samples.len()).filter(|&i| samples[i].label == c).collect())
        .collect();
    let target = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = samples.to_vec();
    for (class, idx) in ClassLabel::ALL.iter().zip(&members) {
        let n = idx.len();
        if n == 0 || n == target {
            continue;
        }
        if n < 2 {
            return Err(DataError::SingletonClass(*class));
        }
        let points: Vec<&[f64]> = idx.iter().map(|&i| samples[i].data.as_slice()).collect();
        let neighbors: Vec<Vec<usize>> = (0..n).map(|i| nearest_neighbors(&points, i, k_neighbors)).collect();
        for t in 0..target - n {
            let base = t % n;
            let nn = &neighbors[base];
            let pick = nn[rng.random_range(0..nn.len())];
            let lambda: f64 = rng.random();
            let src = &samples[idx[base]];
            out.push(Sample {
                channels: src.channels,
                dims: src.dims,
                data: interpolate(points[base], points[pick], lambda),
                label: *class,
                subject_id: format!("synthetic-{}-{:03}", class.name(), t),
                synthetic: true,
            });
        }
    }
    Ok(out)
}
