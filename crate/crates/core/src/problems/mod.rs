//! Synthetic two-task objectives with closed-form gradients.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{is_finite, GradientSet, ParamVector};

pub mod one_optimum;
pub mod oracle;
pub mod two_optima;

/// Floor applied to the absolute value inside the log terms.
pub const LOG_FLOOR: f64 = 5e-6;

/// A differentiable K-task objective over a fixed-dimension parameter space.
pub trait Objective: Send + Sync {
    fn task_count(&self) -> usize;

    fn dimension(&self) -> usize;

    /// Unweighted per-task losses.
    fn losses(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Unweighted per-task gradients.
    fn gradients(&self, theta: &[f64]) -> Result<GradientSet>;

    /// Whether `theta` lies within `radius` of a locus where some loss is not
    /// differentiable.
    fn near_kink(&self, _theta: &[f64], _radius: f64) -> bool {
        false
    }
}

/// A located minimum of the weighted objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub location: ParamVector,
    pub loss: f64,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub task_weights: Vec<f64>,
    pub initial_points: Vec<ParamVector>,
    pub known_optima: Vec<KnownOptimum>,
    pub objective: Arc<dyn Objective>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("task_weights", &self.task_weights)
            .field("initial_points", &self.initial_points)
            .field("known_optima", &self.known_optima)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn task_count(&self) -> usize {
        self.objective.task_count()
    }

    pub fn dimension(&self) -> usize {
        self.objective.dimension()
    }

    /// `Σ_k w_k L_k` at `theta`.
    pub fn combined_loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(weighted_sum(&self.objective.losses(theta)?, &self.task_weights))
    }

    /// Per-task gradients scaled by the task weights.
    pub fn weighted_gradients(&self, theta: &[f64]) -> Result<GradientSet> {
        let grads = self.objective.gradients(theta)?;
        if self.task_weights.iter().all(|&w| w == 1.0) {
            return Ok(grads);
        }
        let scaled = grads
            .into_inner()
            .into_iter()
            .zip(&self.task_weights)
            .map(|(g, w)| g.into_iter().map(|x| w * x).collect())
            .collect();
        GradientSet::new(scaled)
    }

    /// Smallest loss among the known optima.
    pub fn global_optimum_loss(&self) -> Option<f64> {
        self.known_optima
            .iter()
            .map(|o| o.loss)
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Re-weights the problem as `L_mtl = α L₁ + L₂` and relocates its optima.
    pub fn with_alpha(&self, alpha: f64) -> Result<ProblemSpec> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("task weight alpha must be positive, got {alpha}")));
        }
        if self.task_count() != 2 {
            return Err(Error::TaskCount { expected: 2, found: self.task_count() });
        }
        let mut spec = self.clone();
        spec.task_weights = vec![alpha, 1.0];
        if alpha != 1.0 {
            spec.known_optima = oracle::locate_optima(&spec, &oracle::OracleConfig::coarse())?;
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.task_count(), self.dimension());
        if self.task_weights.len() != k {
            return Err(Error::TaskCount { expected: k, found: self.task_weights.len() });
        }
        if !self.task_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(Error::config("task weights must be positive and finite"));
        }
        if self.initial_points.is_empty() {
            return Err(Error::config("problem has no initial points"));
        }
        for p in self.initial_points.iter().chain(self.known_optima.iter().map(|o| &o.location)) {
            if p.dimension() != m {
                return Err(Error::DimensionMismatch { expected: m, found: p.dimension() });
            }
        }
        Ok(())
    }
}

pub(crate) fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

pub(crate) fn check_point(theta: &[f64], dimension: usize) -> Result<()> {
    if theta.len() != dimension {
        return Err(Error::DimensionMismatch { expected: dimension, found: theta.len() });
    }
    if !is_finite(theta) {
        return Err(Error::non_finite("parameter point"));
    }
    Ok(())
}

/// `ln(max(|u|, floor)) + 6` and its derivative with respect to `u`.
///
/// Past the floor the slope is `1/u`; where the floor is active, or `u` is
/// exactly zero, the slope is zero.
pub(crate) fn floored_log(u: f64) -> (f64, f64) {
    let a = u.abs();
    if a < LOG_FLOOR {
        (LOG_FLOOR.ln() + 6.0, 0.0)
    } else {
        (a.ln() + 6.0, 1.0 / u)
    }
}

/// `max(tanh(s·x), 0)` and its derivative in `x`; zero slope at the kink.
pub(crate) fn gate(s: f64, x: f64) -> (f64, f64) {
    let t = (s * x).tanh();
    if t > 0.0 {
        (t, s * (1.0 - t * t))
    } else {
        (0.0, 0.0)
    }
}

/// Names accepted by [`problem_by_name`].
pub const PROBLEM_NAMES: [&str; 2] = ["two_optima", "one_optimum"];

pub fn problem_by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "two_optima" => Ok(two_optima::two_optima_problem()),
        "one_optimum" => one_optimum::one_optimum_problem(),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

pub(crate) fn points(raw: &[[f64; 2]]) -> Vec<ParamVector> {
    raw.iter()
        .map(|p| ParamVector::new(p.to_vec()).expect("static points are finite"))
        .collect()
}
