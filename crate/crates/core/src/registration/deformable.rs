//! Cubic B-spline free-form registration under `-MI + α · bending energy`.

use crate::volume::Volume;

use super::affine::AffineTransform;
use super::bspline::{AxisSupport, BSplineTransform, BendingOperator};
use super::field::DisplacementField;
use super::optimize::{steepest_descent, DescentSettings, Objective, RegistrationReport};
use super::pyramid::Level;
use super::{RegistrationConfig, RegistrationError};

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineRegistration {
    /// Total displacement `φ(x) - x`, including the affine initialisation.
    pub transform: BSplineTransform,
    /// The transform sampled on every fixed-grid voxel.
    pub field: DisplacementField,
    pub report: RegistrationReport,
}

pub(crate) struct DeformableObjective<'a> {
    level: &'a Level,
    supports: Vec<[AxisSupport; 3]>,
    bending: &'a BendingOperator,
    alpha: f64,
    scratch: BSplineTransform,
}

impl<'a> DeformableObjective<'a> {
    fn new(level: &'a Level, bending: &'a BendingOperator, alpha: f64, template: &BSplineTransform) -> Self {
        let supports = level.points.iter().map(|&p| template.support(p)).collect();
        Self {
            level,
            supports,
            bending,
            alpha,
            scratch: template.clone(),
        }
    }

    fn load(&mut self, params: &[f64]) {
        for (c, p) in self.scratch.coefficients_mut().iter_mut().zip(params.chunks_exact(3)) {
            *c = [p[0], p[1], p[2]];
        }
    }

    fn warped_position(&self, k: usize) -> [f64; 3] {
        let p = self.level.points[k];
        let u = self.scratch.displacement_with(&self.supports[k]);
        [p[0] + u[0], p[1] + u[1], p[2] + u[2]]
    }

    fn regularizer(&self) -> (f64, Vec<[f64; 3]>) {
        if self.alpha == 0.0 {
            return (0.0, Vec::new());
        }
        self.bending.energy_and_gradient(self.scratch.coefficients())
    }
}

impl Objective for DeformableObjective<'_> {
    fn value(&mut self, params: &[f64]) -> f64 {
        self.load(params);
        let values: Vec<f64> = (0..self.supports.len())
            .map(|k| self.level.moving.sample_trilinear(self.warped_position(k)))
            .collect();
        let mi = self.level.metric.evaluate(&values).0;
        -mi + self.alpha * self.regularizer().0
    }

    fn value_and_gradient(&mut self, params: &[f64]) -> (f64, Vec<f64>) {
        self.load(params);
        let n = self.supports.len();
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for k in 0..n {
            let (v, g) = self.level.moving.sample_with_gradient(self.warped_position(k));
            values.push(v);
            grads.push(g);
        }
        let (mi, dmi) = self.level.metric.evaluate(&values);
        let cd = self.scratch.control_dims();
        let mut grad = vec![0.0; params.len()];
        for k in 0..n {
            let w = dmi[k];
            if w == 0.0 {
                continue;
            }
            let g = grads[k];
            let s = &self.supports[k];
            for c in 0..4 {
                for b in 0..4 {
                    let wyz = s[2].weights[c] * s[1].weights[b];
                    let row = s[0].first + cd[0] * (s[1].first + b + cd[1] * (s[2].first + c));
                    for a in 0..4 {
                        let f = -w * wyz * s[0].weights[a];
                        let idx = 3 * (row + a);
                        grad[idx] += f * g[0];
                        grad[idx + 1] += f * g[1];
                        grad[idx + 2] += f * g[2];
                    }
                }
            }
        }
        let (energy, egrad) = self.regularizer();
        for (i, e) in egrad.iter().enumerate() {
            for a in 0..3 {
                grad[3 * i + a] += self.alpha * e[a];
            }
        }
        (-mi + self.alpha * energy, grad)
    }
}

/// Deformable stage, initialised from an affine pre-alignment.
///
/// The control grid starts at the coefficients that reproduce `init` exactly,
/// so the returned transform describes the full mapping and its bending
/// energy counts only the non-affine part.
pub fn register_bspline(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    config: &RegistrationConfig,
) -> Result<BSplineRegistration, RegistrationError> {
    config.validate()?;
    let g = fixed.geometry();
    let (m, b) = init.to_voxel_map(g, moving.geometry());
    let mut a = [[0.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut transform =
        BSplineTransform::from_affine_displacement(g.dims(), [config.control_spacing; 3], a, [b[0], b[1], b[2]])?;
    let bending = BendingOperator::new(&transform, g);
    let mut params: Vec<f64> = transform.coefficients().iter().flatten().copied().collect();
    let mut report = RegistrationReport::default();
    for factor in config.pyramid_factors() {
        let level = Level::new(fixed, moving, factor, config);
        let mut objective = DeformableObjective::new(&level, &bending, config.alpha, &transform);
        let settings = DescentSettings {
            max_iterations: config.iterations,
            initial_step: config.initial_step,
            min_step: config.min_step,
        };
        report
            .levels
            .push(steepest_descent(&mut objective, &mut params, settings, factor));
    }
    for (c, p) in transform.coefficients_mut().iter_mut().zip(params.chunks_exact(3)) {
        *c = [p[0], p[1], p[2]];
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(RegistrationError::NonFinite("B-spline coefficients"));
    }
    let field = transform.to_field(g);
    Ok(BSplineRegistration {
        transform,
        field,
        report,
    })
}
