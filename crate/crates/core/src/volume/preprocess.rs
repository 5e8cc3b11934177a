//! Intensity standardization and brain masking.
//!
//! Desk-scale stand-ins for bias-field correction and skull stripping:
//! percentile-clipped min-max normalization, and a global threshold (Otsu by
//! default) followed by largest-connected-component selection.

use std::collections::{BTreeMap, VecDeque};

use super::{LabelVolume, Volume};

/// Percentile clip bounds, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileClip {
    pub low: f64,
    pub high: f64,
}

impl Default for PercentileClip {
    fn default() -> Self {
        Self { low: 1.0, high: 99.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MaskThreshold {
    #[default]
    Otsu,
    /// Fraction of the intensity range above the minimum.
    Fraction(f64),
}

/// Linear-interpolated percentile (`q` in percent) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    percentile_sorted(&sorted, q)
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn normalize_intensity(volume: &Volume) -> Volume {
    normalize_intensity_with(volume, PercentileClip::default())
}

/// Clip to the given percentiles, then min-max scale into [0, 1].
///
/// A volume with no spread after clipping maps to all zeros.
pub fn normalize_intensity_with(volume: &Volume, clip: PercentileClip) -> Volume {
    let mut sorted = volume.data().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile_sorted(&sorted, clip.low);
    let hi = percentile_sorted(&sorted, clip.high);
    let range = hi - lo;
    let data = if range > 0.0 {
        volume
            .data()
            .iter()
            .map(|&v| ((v.clamp(lo, hi) - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; volume.len()]
    };
    volume.with_data(data).expect("normalized values are finite")
}

/// Otsu threshold over a 256-bin histogram of the volume's range.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, i);
        }
    }
    Some(lo + (best.1 + 1) as f64 * width)
}

/// Threshold, keep the largest 6-connected component, zero the background.
///
/// Returns the masked volume and a binary label map (1 = "brain").
pub fn mask_brain(volume: &Volume, threshold: MaskThreshold) -> (Volume, LabelVolume) {
    let (lo, hi) = volume.min_max();
    let cut = if hi > lo {
        match threshold {
            MaskThreshold::Otsu => otsu_threshold(volume.data()),
            MaskThreshold::Fraction(f) => Some(lo + f * (hi - lo)),
        }
    } else {
        None
    };
    let above: Vec<bool> = match cut {
        Some(t) => volume.data().iter().map(|&v| v >= t).collect(),
        None => vec![false; volume.len()],
    };
    let keep = largest_component(volume, &above);

    let masked = volume
        .with_data(
            volume
                .data()
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { v } else { 0.0 })
                .collect(),
        )
        .expect("masking preserves finiteness");
    let mut names = BTreeMap::new();
    names.insert(1, "brain".to_string());
    let labels = keep.iter().map(|&k| k as u32).collect();
    let mask = LabelVolume::new(volume.geometry().clone(), labels, names).expect("mask labels are 0/1");
    (masked, mask)
}

fn largest_component(volume: &Volume, fg: &[bool]) -> Vec<bool> {
    let g = volume.geometry();
    let [w, h, d] = g.dims();
    let mut comp = vec![u32::MAX; fg.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let [x, y, z] = g.coords(i);
            let mut visit = |j: usize| {
                if fg[j] && comp[j] == u32::MAX {
                    comp[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if z > 0 {
                visit(i - w * h);
            }
            if z + 1 < d {
                visit(i + w * h);
            }
        }
        sizes.push(size);
    }
    // first component wins ties, so the result is independent of anything but scan order
    let Some(best) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32)
    else {
        return vec![false; fg.len()];
    };
    comp.iter().map(|&c| c == best).collect()
}
