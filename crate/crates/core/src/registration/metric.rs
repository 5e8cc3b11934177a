//! Mutual information from a Parzen-windowed joint histogram.
//!
//! Intensities are mapped linearly onto a continuous bin axis `t ∈ [0, bins-1]`.
//! A [`ParzenWindow::Nearest`] window drops each sample into `round(t)`; a
//! [`ParzenWindow::CubicBSpline`] window spreads it over the four bins
//! around `t` with cubic B-spline weights (mass falling past either end is
//! folded into the edge bin, so every sample contributes exactly 1).
//!
//! The Mattes configuration uses the cubic window on the moving axis and the
//! zero-order window on the fixed axis; that makes the estimate differentiable
//! in the moving intensities, which [`HistogramMi`] exploits for analytic
//! gradients.

use serde::{Deserialize, Serialize};

use crate::volume::Volume;

use super::RegistrationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParzenWindow {
    Nearest,
    CubicBSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiConfig {
    pub bins: usize,
    pub fixed_window: ParzenWindow,
    pub moving_window: ParzenWindow,
}

impl MiConfig {
    pub fn mattes(bins: usize) -> Self {
        Self {
            bins,
            fixed_window: ParzenWindow::Nearest,
            moving_window: ParzenWindow::CubicBSpline,
        }
    }
}

/// Cubic B-spline kernel β³.
#[inline]
pub fn cubic_bspline(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

#[inline]
pub fn cubic_bspline_derivative(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        -2.0 * u + 1.5 * u * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        -0.5 * t * t * u.signum()
    } else {
        0.0
    }
}

/// Affine intensity → bin-coordinate map.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BinMap {
    min: f64,
    scale: f64,
    bins: usize,
}

impl BinMap {
    /// `None` for a constant volume (zero-entropy convention).
    pub(crate) fn from_range(min: f64, max: f64, bins: usize) -> Option<Self> {
        if max > min {
            Some(Self {
                min,
                scale: (bins - 1) as f64 / (max - min),
                bins,
            })
        } else {
            None
        }
    }

    /// Continuous bin coordinate and its derivative with respect to intensity.
    #[inline]
    pub(crate) fn coord(&self, v: f64) -> (f64, f64) {
        let t = (v - self.min) * self.scale;
        let hi = (self.bins - 1) as f64;
        if t < 0.0 {
            (0.0, 0.0)
        } else if t > hi {
            (hi, 0.0)
        } else {
            (t, self.scale)
        }
    }
}

/// Window weights of one sample: up to four `(bin, weight, d weight / d t)`.
#[inline]
fn window_weights(window: ParzenWindow, t: f64, bins: usize) -> ([(usize, f64, f64); 4], usize) {
    let mut out = [(0usize, 0.0, 0.0); 4];
    match window {
        ParzenWindow::Nearest => {
            out[0] = ((t.round() as usize).min(bins - 1), 1.0, 0.0);
            (out, 1)
        }
        ParzenWindow::CubicBSpline => {
            let base = t.floor() as i64;
            for (slot, o) in (-1i64..=2).enumerate() {
                let k = base + o;
                let u = k as f64 - t;
                let bin = k.clamp(0, bins as i64 - 1) as usize;
                out[slot] = (bin, cubic_bspline(u), -cubic_bspline_derivative(u));
            }
            (out, 4)
        }
    }
}

fn check_same_dims(a: &Volume, b: &Volume) -> Result<(), RegistrationError> {
    if a.dims() != b.dims() {
        return Err(RegistrationError::DimMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Mattes mutual information (zero-order fixed window, cubic moving window).
pub fn mattes_mi(fixed: &Volume, moving: &Volume, bins: usize) -> Result<f64, RegistrationError> {
    if bins < 4 {
        return Err(RegistrationError::Bins(bins));
    }
    mutual_information(fixed, moving, &MiConfig::mattes(bins))
}

/// Mutual information under an explicit window configuration (`bins ≥ 2`).
pub fn mutual_information(fixed: &Volume, moving: &Volume, config: &MiConfig) -> Result<f64, RegistrationError> {
    check_same_dims(fixed, moving)?;
    if config.bins < 2 {
        return Err(RegistrationError::Bins(config.bins));
    }
    let bins = config.bins;
    let (fmin, fmax) = fixed.min_max();
    let (mmin, mmax) = moving.min_max();
    let (Some(fmap), Some(mmap)) = (
        BinMap::from_range(fmin, fmax, bins),
        BinMap::from_range(mmin, mmax, bins),
    ) else {
        return Ok(0.0);
    };

    let mut joint = vec![0.0; bins * bins];
    for (&f, &m) in fixed.data().iter().zip(moving.data()) {
        let (fw, nf) = window_weights(config.fixed_window, fmap.coord(f).0, bins);
        let (mw, nm) = window_weights(config.moving_window, mmap.coord(m).0, bins);
        for &(fb, fwt, _) in &fw[..nf] {
            for &(mb, mwt, _) in &mw[..nm] {
                joint[fb * bins + mb] += fwt * mwt;
            }
        }
    }
    let n = fixed.len() as f64;
    joint.iter_mut().for_each(|p| *p /= n);
    Ok(mi_from_joint(&joint, bins))
}

/// MI of a normalized joint table `p[f * bins + m]`; marginals are its sums.
pub fn mi_from_joint(joint: &[f64], bins: usize) -> f64 {
    let mut pf = vec![0.0; bins];
    let mut pm = vec![0.0; bins];
    for f in 0..bins {
        for m in 0..bins {
            let p = joint[f * bins + m];
            pf[f] += p;
            pm[m] += p;
        }
    }
    let mut mi = 0.0;
    for f in 0..bins {
        for m in 0..bins {
            let p = joint[f * bins + m];
            if p > 0.0 {
                mi += p * (p / (pf[f] * pm[m])).ln();
            }
        }
    }
    mi
}

/// Mattes MI over a fixed sample set, differentiable in the moving values.
///
/// Fixed bins are frozen at construction; the moving intensity range is
/// taken from the full moving image so that it does not move with the
/// transform.
pub(crate) struct HistogramMi {
    bins: usize,
    /// Up to four `(bin, weight)` pairs per sample on the fixed axis.
    fixed_weights: Vec<[(usize, f64); 4]>,
    moving_map: Option<BinMap>,
}

impl HistogramMi {
    pub(crate) fn new(fixed_values: &[f64], moving_range: (f64, f64), bins: usize, fixed_window: ParzenWindow) -> Self {
        let (fmin, fmax) = fixed_values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let fixed_weights = match BinMap::from_range(fmin, fmax, bins) {
            Some(map) => fixed_values
                .iter()
                .map(|&v| {
                    let (w, n) = window_weights(fixed_window, map.coord(v).0, bins);
                    let mut out = [(0usize, 0.0); 4];
                    for (o, &(b, wt, _)) in out.iter_mut().zip(&w[..n]) {
                        *o = (b, wt);
                    }
                    out
                })
                .collect(),
            None => vec![[(0, 1.0), (0, 0.0), (0, 0.0), (0, 0.0)]; fixed_values.len()],
        };
        Self {
            bins,
            fixed_weights,
            moving_map: BinMap::from_range(moving_range.0, moving_range.1, bins),
        }
    }

    /// MI and `∂MI/∂m_i` for every sample's moving intensity.
    pub(crate) fn evaluate(&self, moving_values: &[f64]) -> (f64, Vec<f64>) {
        let n = moving_values.len();
        let bins = self.bins;
        let Some(map) = self.moving_map else {
            return (0.0, vec![0.0; n]);
        };
        let inv_n = 1.0 / n as f64;
        let mut joint = vec![0.0; bins * bins];
        let mut cached = Vec::with_capacity(n);
        for (i, &m) in moving_values.iter().enumerate() {
            let (t, dt) = map.coord(m);
            let (w, _) = window_weights(ParzenWindow::CubicBSpline, t, bins);
            for &(f, fw) in &self.fixed_weights[i] {
                if fw == 0.0 {
                    continue;
                }
                let row = f * bins;
                for &(b, wt, _) in &w {
                    joint[row + b] += fw * wt * inv_n;
                }
            }
            cached.push((w, dt));
        }
        let mut pm = vec![0.0; bins];
        let mut pf = vec![0.0; bins];
        for f in 0..bins {
            for m in 0..bins {
                pm[m] += joint[f * bins + m];
                pf[f] += joint[f * bins + m];
            }
        }
        let mut log_ratio = vec![0.0; bins * bins];
        let mut mi = 0.0;
        for f in 0..bins {
            for m in 0..bins {
                let p = joint[f * bins + m];
                if p > 0.0 {
                    mi += p * (p / (pf[f] * pm[m])).ln();
                    log_ratio[f * bins + m] = (p / pm[m]).ln();
                }
            }
        }
        let grad = cached
            .iter()
            .enumerate()
            .map(|(i, (w, dt))| {
                if *dt == 0.0 {
                    return 0.0;
                }
                let mut s = 0.0;
                for &(f, fw) in &self.fixed_weights[i] {
                    if fw == 0.0 {
                        continue;
                    }
                    let row = f * bins;
                    s += fw * w.iter().map(|&(b, _, dw)| dw * log_ratio[row + b]).sum::<f64>();
                }
                s * dt * inv_n
            })
            .collect();
        (mi, grad)
    }
}
