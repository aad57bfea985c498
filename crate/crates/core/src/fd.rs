//! Central finite differences, the reference against which every analytic
//! gradient is checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::vector::{l2_norm, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdScheme {
    #[default]
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub scheme: FdScheme,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-6, scheme: FdScheme::Central }
    }
}

/// `[(L(θ + h eᵢ) − L(θ − h eᵢ)) / 2h]ᵢ`
pub fn fd_gradient<F>(loss: F, theta: &ParamVector, cfg: &FdConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {}", cfg.step)));
    }
    let h = cfg.step;
    let mut probe = theta.as_slice().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let x = probe[i];
        probe[i] = x + h;
        let up = loss(&probe)?;
        probe[i] = x - h;
        let down = loss(&probe)?;
        probe[i] = x;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::non_finite(format!("loss near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = l2_norm(a).max(l2_norm(b)).max(floor);
    diff / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckConfig {
    pub samples: usize,
    pub lower: f64,
    pub upper: f64,
    /// Points this close to a non-differentiable locus are redrawn.
    pub kink_radius: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub fd: FdConfig,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            lower: -10.0,
            upper: 10.0,
            kink_radius: 1e-3,
            tolerance: 1e-5,
            seed: 0,
            fd: FdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub samples: usize,
    pub rejected_near_kink: usize,
    pub max_relative_error: f64,
    pub worst_point: Vec<f64>,
    pub failures: usize,
    pub tolerance: f64,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares analytic task gradients with central differences at uniformly
/// drawn points, skipping the neighbourhoods of kinks.
pub fn check_gradients(objective: &dyn Objective, cfg: &GradientCheckConfig) -> Result<GradientCheckReport> {
    if !(cfg.upper > cfg.lower) {
        return Err(Error::config("gradient check needs upper > lower"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = objective.dimension();
    let mut report = GradientCheckReport {
        samples: 0,
        rejected_near_kink: 0,
        max_relative_error: 0.0,
        worst_point: Vec::new(),
        failures: 0,
        tolerance: cfg.tolerance,
    };
    while report.samples < cfg.samples {
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(cfg.lower..cfg.upper)).collect();
        if objective.near_kink(&raw, cfg.kink_radius) {
            report.rejected_near_kink += 1;
            continue;
        }
        let theta = ParamVector::new(raw)?;
        let analytic = objective.gradients(theta.as_slice())?;
        for k in 0..objective.task_count() {
            let numeric = fd_gradient(|x| Ok(objective.losses(x)?[k]), &theta, &cfg.fd)?;
            let err = relative_error(analytic.get(k), &numeric, 1e-8);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_point = theta.as_slice().to_vec();
            }
            if !(err < cfg.tolerance) {
                report.failures += 1;
            }
        }
        report.samples += 1;
    }
    Ok(report)
}
