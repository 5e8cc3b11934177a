//! Global affine alignment.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::volume::{Geometry, Volume};

use super::field::DisplacementField;
use super::optimize::{steepest_descent, DescentSettings, Objective, RegistrationReport};
use super::pyramid::Level;
use super::{RegistrationConfig, RegistrationError};

/// `y = matrix · x + translation`, mapping fixed-image world coordinates (mm)
/// to moving-image world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    matrix: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl AffineTransform {
    pub fn new(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, RegistrationError> {
        let det = matrix.determinant();
        if !(det.abs() > 1e-12) {
            return Err(RegistrationError::SingularMatrix(det));
        }
        if matrix.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(RegistrationError::NonFinite("affine transform"));
        }
        Ok(Self { matrix, translation })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let y = self.matrix * Vector3::from(p) + self.translation;
        [y[0], y[1], y[2]]
    }

    fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.matrix);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self, RegistrationError> {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// The same map expressed between voxel grids: `q = M p + b`.
    pub fn to_voxel_map(&self, fixed: &Geometry, moving: &Geometry) -> (Matrix3<f64>, Vector3<f64>) {
        let inv_m = moving.affine().try_inverse().expect("geometry affine is nonsingular");
        let v = inv_m * self.homogeneous() * fixed.affine();
        (
            v.fixed_view::<3, 3>(0, 0).into_owned(),
            v.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn from_voxel_map(
        matrix: Matrix3<f64>,
        offset: Vector3<f64>,
        fixed: &Geometry,
        moving: &Geometry,
    ) -> Result<Self, RegistrationError> {
        let mut v = Matrix4::identity();
        v.fixed_view_mut::<3, 3>(0, 0).copy_from(&matrix);
        v.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
        let inv_f = fixed.affine().try_inverse().expect("geometry affine is nonsingular");
        Self::from_homogeneous(&(moving.affine() * v * inv_f))
    }

    /// Displacement field on the fixed grid, in moving-grid voxel offsets.
    pub fn to_field(&self, fixed: &Geometry, moving: &Geometry) -> DisplacementField {
        let (m, b) = self.to_voxel_map(fixed, moving);
        DisplacementField::from_fn(fixed.clone(), |x, y, z| {
            let p = Vector3::new(x as f64, y as f64, z as f64);
            let q = m * p + b - p;
            [q[0], q[1], q[2]]
        })
        .expect("finite affine map")
    }
}

/// Parameters: `L` (9, scaled by `1/radius`) and `d` (3) in
/// `q = c + (I + L)(p - c) + d`, with `c` the fixed-grid centre.
struct AffineParams {
    center: Vector3<f64>,
    radius: f64,
}

impl AffineParams {
    fn decode(&self, theta: &[f64]) -> (Matrix3<f64>, Vector3<f64>) {
        let mut m = Matrix3::identity();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += theta[3 * i + j] / self.radius;
            }
        }
        let d = Vector3::new(theta[9], theta[10], theta[11]);
        let b = self.center - m * self.center + d;
        (m, b)
    }

    #[cfg(test)]
    fn encode(&self, m: &Matrix3<f64>, b: &Vector3<f64>) -> Vec<f64> {
        let mut theta = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                theta[3 * i + j] = (m[(i, j)] - id) * self.radius;
            }
        }
        let d = b - self.center + m * self.center;
        theta[9..12].copy_from_slice(d.as_slice());
        theta
    }
}

struct AffineObjective<'a> {
    level: &'a Level,
    params: &'a AffineParams,
}

impl AffineObjective<'_> {
    fn moving_values(&self, theta: &[f64], with_gradient: bool) -> (Vec<f64>, Vec<[f64; 3]>) {
        let (m, b) = self.params.decode(theta);
        let n = self.level.points.len();
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(if with_gradient { n } else { 0 });
        for p in &self.level.points {
            let q = m * Vector3::from(*p) + b;
            let q = [q[0], q[1], q[2]];
            if with_gradient {
                let (v, g) = self.level.moving.sample_with_gradient(q);
                values.push(v);
                grads.push(g);
            } else {
                values.push(self.level.moving.sample_trilinear(q));
            }
        }
        (values, grads)
    }
}

impl Objective for AffineObjective<'_> {
    fn value(&mut self, theta: &[f64]) -> f64 {
        let (values, _) = self.moving_values(theta, false);
        -self.level.metric.evaluate(&values).0
    }

    fn value_and_gradient(&mut self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (values, grads) = self.moving_values(theta, true);
        let (mi, dmi) = self.level.metric.evaluate(&values);
        let c = self.params.center;
        let r = self.params.radius;
        let mut grad = vec![0.0; 12];
        for ((p, g), &w) in self.level.points.iter().zip(&grads).zip(&dmi) {
            if w == 0.0 {
                continue;
            }
            let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            for i in 0..3 {
                let s = -w * g[i];
                for j in 0..3 {
                    grad[3 * i + j] += s * rel[j] / r;
                }
                grad[9 + i] += s;
            }
        }
        (-mi, grad)
    }
}

/// Maximise Mattes MI over a 12-parameter affine map, coarse to fine.
///
/// Never fails on non-convergence: the best iterate is returned and the
/// report carries the status.
pub fn register_affine(
    fixed: &Volume,
    moving: &Volume,
    config: &RegistrationConfig,
) -> Result<(AffineTransform, RegistrationReport), RegistrationError> {
    config.validate()?;
    let g = fixed.geometry();
    let c = g.center();
    let params = AffineParams {
        center: Vector3::from(c),
        radius: c.iter().fold(1.0f64, |m, &v| m.max(v)),
    };
    let mut theta = vec![0.0; 12];
    let mut report = RegistrationReport::default();
    for factor in config.pyramid_factors() {
        let level = Level::new(fixed, moving, factor, config);
        let mut objective = AffineObjective {
            level: &level,
            params: &params,
        };
        let settings = DescentSettings {
            max_iterations: config.affine_iterations,
            initial_step: config.initial_step * factor as f64,
            min_step: config.min_step,
        };
        report
            .levels
            .push(steepest_descent(&mut objective, &mut theta, settings, factor));
    }
    let (m, b) = params.decode(&theta);
    let transform = AffineTransform::from_voxel_map(m, b, g, moving.geometry())?;
    Ok((transform, report))
}
