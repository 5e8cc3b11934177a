//! Steepest descent with a backtracking line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    /// The line search could not improve on the current iterate.
    Converged,
    /// The iteration budget ran out; the best iterate so far is returned.
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// Sampling stride of this pyramid level.
    pub factor: usize,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub status: Convergence,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub levels: Vec<LevelReport>,
}

impl RegistrationReport {
    /// Status of the finest level (`Converged` when nothing ran).
    pub fn status(&self) -> Convergence {
        self.levels.last().map(|l| l.status).unwrap_or(Convergence::Converged)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.levels.last().and_then(|l| l.objective_trace.last().copied())
    }
}

pub(crate) trait Objective {
    fn value(&mut self, params: &[f64]) -> f64;
    fn value_and_gradient(&mut self, params: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentSettings {
    pub(crate) max_iterations: usize,
    pub(crate) initial_step: f64,
    pub(crate) min_step: f64,
}

const SHRINK: f64 = 0.5;
const GROW: f64 = 1.5;
const MAX_STEP_RATIO: f64 = 4.0;

/// Minimise `objective` from `params` in place.
///
/// The search direction is the negative gradient scaled so that its largest
/// entry is 1, making the step length a bound on the per-parameter change.
/// Only strictly decreasing steps are accepted.
pub(crate) fn steepest_descent(
    objective: &mut impl Objective,
    params: &mut [f64],
    settings: DescentSettings,
    factor: usize,
) -> LevelReport {
    let (mut value, mut grad) = objective.value_and_gradient(params);
    let mut trace = vec![value];
    let mut step = settings.initial_step;
    let max_step = settings.initial_step * MAX_STEP_RATIO;
    let mut trial = params.to_vec();

    for iteration in 0..settings.max_iterations {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(gmax > 0.0) || !gmax.is_finite() {
            return level(factor, iteration, trace, Convergence::Converged);
        }
        loop {
            for ((t, &p), &g) in trial.iter_mut().zip(params.iter()).zip(&grad) {
                *t = p - step * g / gmax;
            }
            let candidate = objective.value(&trial);
            if candidate < value {
                params.copy_from_slice(&trial);
                step = (step * GROW).min(max_step);
                break;
            }
            step *= SHRINK;
            if step < settings.min_step {
                return level(factor, iteration, trace, Convergence::Converged);
            }
        }
        (value, grad) = objective.value_and_gradient(params);
        trace.push(value);
    }
    level(factor, settings.max_iterations, trace, Convergence::MaxIterations)
}

fn level(factor: usize, iterations: usize, objective_trace: Vec<f64>, status: Convergence) -> LevelReport {
    LevelReport {
        factor,
        iterations,
        objective_trace,
        status,
    }
}
