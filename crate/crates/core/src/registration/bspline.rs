//! Cubic B-spline free-form deformation.
//!
//! Control point `k` along an axis sits at voxel coordinate `(k - 1) * spacing`,
//! so the grid covers the fixed domain plus one ring on each side:
//! `control_dims = floor((dim - 1) / spacing) + 4`.

use crate::volume::Geometry;

use super::field::DisplacementField;
use super::metric::cubic_bspline;
use super::RegistrationError;

/// The four cubic pieces on a unit interval.
#[inline]
pub(crate) fn basis(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

#[inline]
fn basis_d1(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let v = 1.0 - u;
    [-0.5 * v * v, 1.5 * u2 - 2.0 * u, -1.5 * u2 + u + 0.5, 0.5 * u2]
}

#[inline]
fn basis_d2(u: f64) -> [f64; 4] {
    [1.0 - u, 3.0 * u - 2.0, -3.0 * u + 1.0, u]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTransform {
    domain_dims: [usize; 3],
    control_spacing: [f64; 3],
    control_dims: [usize; 3],
    coefficients: Vec<[f64; 3]>,
}

/// Per-axis support of one point: first control index and the four weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisSupport {
    pub(crate) first: usize,
    pub(crate) weights: [f64; 4],
}

impl BSplineTransform {
    /// Zero deformation over `domain_dims` with control spacing in voxels.
    pub fn zeros(domain_dims: [usize; 3], control_spacing: [f64; 3]) -> Result<Self, RegistrationError> {
        if control_spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(RegistrationError::Config(format!(
                "control spacing must be positive, got {control_spacing:?}"
            )));
        }
        let control_dims =
            [0, 1, 2].map(|a| ((domain_dims[a].max(1) - 1) as f64 / control_spacing[a]).floor() as usize + 4);
        let n = control_dims.iter().product();
        Ok(Self {
            domain_dims,
            control_spacing,
            control_dims,
            coefficients: vec![[0.0; 3]; n],
        })
    }

    pub fn from_coefficients(
        domain_dims: [usize; 3],
        control_spacing: [f64; 3],
        coefficients: Vec<[f64; 3]>,
    ) -> Result<Self, RegistrationError> {
        let mut t = Self::zeros(domain_dims, control_spacing)?;
        if coefficients.len() != t.coefficients.len() {
            return Err(RegistrationError::Config(format!(
                "expected {} control points, got {}",
                t.coefficients.len(),
                coefficients.len()
            )));
        }
        if coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(RegistrationError::NonFinite("B-spline coefficients"));
        }
        t.coefficients = coefficients;
        Ok(t)
    }

    pub fn domain_dims(&self) -> [usize; 3] {
        self.domain_dims
    }

    pub fn control_spacing(&self) -> [f64; 3] {
        self.control_spacing
    }

    pub fn control_dims(&self) -> [usize; 3] {
        self.control_dims
    }

    pub fn coefficients(&self) -> &[[f64; 3]] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coefficients
    }

    pub fn num_control_points(&self) -> usize {
        self.coefficients.len()
    }

    #[inline]
    pub fn control_index(&self, k: [usize; 3]) -> usize {
        k[0] + self.control_dims[0] * (k[1] + self.control_dims[1] * k[2])
    }

    /// Voxel position of control point `k`.
    pub fn control_position(&self, k: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (k[a] as f64 - 1.0) * self.control_spacing[a])
    }

    #[inline]
    fn axis_param(&self, axis: usize, x: f64) -> (usize, f64) {
        let t = x / self.control_spacing[axis] + 1.0;
        let i = (t.floor() as i64).clamp(1, self.control_dims[axis] as i64 - 3);
        (i as usize - 1, t - i as f64)
    }

    #[inline]
    pub(crate) fn support(&self, p: [f64; 3]) -> [AxisSupport; 3] {
        [0, 1, 2].map(|a| {
            let (first, u) = self.axis_param(a, p[a]);
            AxisSupport {
                first,
                weights: basis(u),
            }
        })
    }

    #[inline]
    pub(crate) fn displacement_with(&self, s: &[AxisSupport; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..4 {
            let wz = s[2].weights[c];
            for b in 0..4 {
                let wyz = wz * s[1].weights[b];
                let row = self.control_index([s[0].first, s[1].first + b, s[2].first + c]);
                for a in 0..4 {
                    let w = wyz * s[0].weights[a];
                    let coef = &self.coefficients[row + a];
                    out[0] += w * coef[0];
                    out[1] += w * coef[1];
                    out[2] += w * coef[2];
                }
            }
        }
        out
    }

    /// Displacement u(p) in voxels.
    pub fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        self.displacement_with(&self.support(p))
    }

    /// Second derivatives `∂²u_i/∂x_j∂x_k` at `p`, in voxel units.
    pub fn hessians(&self, p: [f64; 3]) -> [[[f64; 3]; 3]; 3] {
        let mut params = [(0usize, 0.0); 3];
        for a in 0..3 {
            params[a] = self.axis_param(a, p[a]);
        }
        let w: [[[f64; 4]; 3]; 3] = [0, 1, 2].map(|a| {
            let u = params[a].1;
            let s = self.control_spacing[a];
            [basis(u), basis_d1(u).map(|v| v / s), basis_d2(u).map(|v| v / (s * s))]
        });
        let mut h = [[[0.0; 3]; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                let mut order = [0usize; 3];
                order[j] += 1;
                order[k] += 1;
                for c in 0..4 {
                    for b in 0..4 {
                        for a in 0..4 {
                            let wt = w[0][order[0]][a] * w[1][order[1]][b] * w[2][order[2]][c];
                            let idx = self.control_index([params[0].0 + a, params[1].0 + b, params[2].0 + c]);
                            for i in 0..3 {
                                h[i][j][k] += wt * self.coefficients[idx][i];
                            }
                        }
                    }
                }
            }
        }
        h
    }

    /// Sample the displacement on every voxel of `geometry`.
    pub fn to_field(&self, geometry: &Geometry) -> DisplacementField {
        let vectors = (0..geometry.len())
            .map(|i| {
                let [x, y, z] = geometry.coords(i);
                self.displacement([x as f64, y as f64, z as f64])
            })
            .collect();
        DisplacementField::new(geometry.clone(), vectors).expect("finite coefficients")
    }

    /// Coefficients reproducing the affine displacement `u(x) = A x + b` exactly.
    pub fn from_affine_displacement(
        domain_dims: [usize; 3],
        control_spacing: [f64; 3],
        a: [[f64; 3]; 3],
        b: [f64; 3],
    ) -> Result<Self, RegistrationError> {
        let mut t = Self::zeros(domain_dims, control_spacing)?;
        let cd = t.control_dims;
        for kz in 0..cd[2] {
            for ky in 0..cd[1] {
                for kx in 0..cd[0] {
                    let p = t.control_position([kx, ky, kz]);
                    let idx = t.control_index([kx, ky, kz]);
                    for i in 0..3 {
                        t.coefficients[idx][i] = a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2] + b[i];
                    }
                }
            }
        }
        Ok(t)
    }
}

/// Quadratic B-spline β².
#[inline]
fn quadratic_bspline(u: f64) -> f64 {
    let a = u.abs();
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

#[inline]
fn linear_bspline(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Dense row-major matrix.
#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Dense {
    fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            values,
        }
    }

    /// Forward difference of order `m` (1 or 2) on `n` points.
    fn difference(n: usize, m: usize) -> Self {
        if m == 0 {
            return Self::identity(n);
        }
        let stencil: &[f64] = if m == 1 { &[-1.0, 1.0] } else { &[1.0, -2.0, 1.0] };
        let rows = n - m;
        let mut values = vec![0.0; rows * n];
        for r in 0..rows {
            for (o, &w) in stencil.iter().enumerate() {
                values[r * n + r + o] = w;
            }
        }
        Self { rows, cols: n, values }
    }

    fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

/// Gram matrix `Σ_x b_j(x) b_l(x)` of the order-`m` derivative basis.
///
/// The m-th derivative of `Σ_k c_k β³(t - k)` is `Σ_j (Δ^m c)_j β^{3-m}(t - j - m/2)`,
/// so the basis here is the lower-degree spline attached to each difference.
fn derivative_gram(n_control: usize, spacing: f64, samples: usize, m: usize) -> Dense {
    let n = n_control - m;
    let shift = m as f64 / 2.0;
    let basis = |u: f64| match m {
        0 => cubic_bspline(u),
        1 => quadratic_bspline(u),
        _ => linear_bspline(u),
    };
    let scale = spacing.powi(-(2 * m as i32));
    let mut g = vec![0.0; n * n];
    for x in 0..samples {
        let t = x as f64 / spacing + 1.0;
        let lo = ((t - shift).floor() as i64 - 2).max(0) as usize;
        let hi = (((t - shift).floor() as i64 + 2).max(0) as usize).min(n - 1);
        for j in lo..=hi {
            let bj = basis(t - j as f64 - shift);
            if bj == 0.0 {
                continue;
            }
            for l in lo..=hi {
                g[j * n + l] += bj * basis(t - l as f64 - shift) * scale;
            }
        }
    }
    Dense {
        rows: n,
        cols: n,
        values: g,
    }
}

/// `(Mz ⊗ My ⊗ Mx) c` for a grid stored x-fastest; returns the new dims.
fn apply_separable(c: &[f64], dims: [usize; 3], mats: [&Dense; 3]) -> (Vec<f64>, [usize; 3]) {
    let mut cur = c.to_vec();
    let mut cur_dims = dims;
    for axis in 0..3 {
        let m = mats[axis];
        debug_assert_eq!(m.cols, cur_dims[axis]);
        let mut out_dims = cur_dims;
        out_dims[axis] = m.rows;
        let inner: usize = cur_dims[..axis].iter().product();
        let outer: usize = cur_dims[axis + 1..].iter().product();
        let mut next = vec![0.0; inner * m.rows * outer];
        for o in 0..outer {
            for r in 0..m.rows {
                let row = &m.values[r * m.cols..(r + 1) * m.cols];
                let dst = (o * m.rows + r) * inner;
                for (k, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = (o * m.cols + k) * inner;
                    for i in 0..inner {
                        next[dst + i] += w * cur[src + i];
                    }
                }
            }
        }
        cur = next;
        cur_dims = out_dims;
    }
    (cur, cur_dims)
}

// (derivative order per axis, multiplicity among the nine second derivatives)
const TERMS: [([usize; 3], f64); 6] = [
    ([2, 0, 0], 1.0),
    ([0, 2, 0], 1.0),
    ([0, 0, 2], 1.0),
    ([1, 1, 0], 2.0),
    ([1, 0, 1], 2.0),
    ([0, 1, 1], 2.0),
];

/// Precomputed quadratic form of the bending energy over a voxel domain.
///
/// Every term is evaluated on differences of the control grid, so an exactly
/// linear grid yields exactly zero energy.
pub(crate) struct BendingOperator {
    dims: [usize; 3],
    /// Per axis, per derivative order: (difference, its transpose, Gram).
    axes: [[(Dense, Dense, Dense); 3]; 3],
    voxel_volume: f64,
}

impl BendingOperator {
    pub(crate) fn new(t: &BSplineTransform, domain: &Geometry) -> Self {
        let dims = t.control_dims;
        let axes = [0, 1, 2].map(|a| {
            [0, 1, 2].map(|m| {
                let d = Dense::difference(dims[a], m);
                let dt = d.transpose();
                (
                    d,
                    dt,
                    derivative_gram(dims[a], t.control_spacing[a], domain.dims()[a], m),
                )
            })
        });
        Self {
            dims,
            axes,
            voxel_volume: domain.voxel_volume(),
        }
    }

    /// Energy of one displacement component and, optionally, its gradient.
    fn component(&self, c: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut energy = 0.0;
        let mut acc = grad.as_ref().map(|_| vec![0.0; c.len()]);
        for (order, mult) in TERMS {
            let op = |k: usize| &self.axes[k][order[k]];
            let (d, ddims) = apply_separable(c, self.dims, [&op(0).0, &op(1).0, &op(2).0]);
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (gd, _) = apply_separable(&d, ddims, [&op(0).2, &op(1).2, &op(2).2]);
            energy += mult * d.iter().zip(&gd).map(|(a, b)| a * b).sum::<f64>();
            if let Some(acc) = acc.as_mut() {
                let (back, _) = apply_separable(&gd, ddims, [&op(0).1, &op(1).1, &op(2).1]);
                for (a, b) in acc.iter_mut().zip(back) {
                    *a += 2.0 * mult * b;
                }
            }
        }
        if let (Some(g), Some(acc)) = (grad, acc) {
            for (g, a) in g.iter_mut().zip(acc) {
                *g = a * self.voxel_volume;
            }
        }
        energy.max(0.0) * self.voxel_volume
    }

    pub(crate) fn energy(&self, coefficients: &[[f64; 3]]) -> f64 {
        (0..3)
            .map(|i| {
                let c: Vec<f64> = coefficients.iter().map(|v| v[i]).collect();
                self.component(&c, None)
            })
            .sum()
    }

    /// Energy and its gradient with respect to every coefficient.
    pub(crate) fn energy_and_gradient(&self, coefficients: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
        let mut energy = 0.0;
        let mut grad = vec![[0.0; 3]; coefficients.len()];
        let mut g = vec![0.0; coefficients.len()];
        for i in 0..3 {
            let c: Vec<f64> = coefficients.iter().map(|v| v[i]).collect();
            energy += self.component(&c, Some(&mut g));
            for (dst, v) in grad.iter_mut().zip(&g) {
                dst[i] = *v;
            }
        }
        (energy, grad)
    }
}

/// `∫ Σ_i Σ_jk (∂²u_i/∂x_j∂x_k)² dV` summed over the voxel centres of `domain`,
/// derivatives in voxel units, scaled by the voxel volume.
pub fn bending_energy(t: &BSplineTransform, domain: &Geometry) -> f64 {
    BendingOperator::new(t, domain).energy(t.coefficients())
}
