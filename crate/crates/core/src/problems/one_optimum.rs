//! Two-task toy problem with a single global optimum.
//!
//! Transcribed from the reference implementation of the conflict-averse
//! gradient descent toy example (`toy.py`, class `Toy`):
//!
//! ```text
//! f₁ = ln max(|0.5(−x₁−7) − tanh(−x₂)|, 5e-6) + 6
//! f₂ = ln max(|0.5(−x₁+3) + tanh(−x₂) + 2|, 5e-6) + 6
//! c₁ = max(tanh(0.5x₂), 0)      c₂ = max(tanh(−0.5x₂), 0)
//! q₁ = ((−x₁+7)² + 0.1(−x₂−8)²)/10 − 20
//! q₂ = ((−x₁−7)² + 0.1(−x₂−8)²)/10 − 20
//! L₁ = c₁ f₁ + c₂ q₁            L₂ = c₁ f₂ + c₂ q₂
//! ```

use std::sync::Arc;

use super::{check_point, floored_log, gate, points, KnownOptimum, Objective, ProblemSpec, LOG_FLOOR};
use crate::error::Result;
use crate::vector::{GradientSet, ParamVector};

pub const INITIAL_POINTS: [[f64; 2]; 7] = [
    [-8.0, 5.0],
    [-3.0, 7.5],
    [0.0, 10.0],
    [3.0, 7.5],
    [8.0, 5.0],
    [-10.0, -2.5],
    [10.0, -2.5],
];

/// Global minimiser of `L₁ + L₂`, written out by `examples/optima_oracle.rs`.
pub const GLOBAL_OPTIMUM: ([f64; 2], f64) = ([0.0, -8.355_109_863_281_25], -30.183_276_890_613_193);

#[derive(Debug, Clone, Copy, Default)]
pub struct OneOptimum;

impl OneOptimum {
    // Returns per task (value, gradient).
    fn eval(theta: &[f64]) -> [(f64, [f64; 2]); 2] {
        let (x1, x2) = (theta[0], theta[1]);
        let th = x2.tanh();
        let sech2 = 1.0 - th * th;
        let (c1, dc1) = gate(0.5, x2);
        let (c2, dc2) = gate(-0.5, x2);

        let u1 = 0.5 * (-x1 - 7.0) + th;
        let u2 = 0.5 * (-x1 + 3.0) - th + 2.0;
        let (f1, df1) = floored_log(u1);
        let (f2, df2) = floored_log(u2);
        let f = [(f1, [-0.5 * df1, sech2 * df1]), (f2, [-0.5 * df2, -sech2 * df2])];

        let tail = 0.1 * (x2 + 8.0) * (x2 + 8.0);
        let dtail = 0.2 * (x2 + 8.0) / 10.0;
        let q = [
            (((x1 - 7.0).powi(2) + tail) / 10.0 - 20.0, [(x1 - 7.0) / 5.0, dtail]),
            (((x1 + 7.0).powi(2) + tail) / 10.0 - 20.0, [(x1 + 7.0) / 5.0, dtail]),
        ];

        let task = |k: usize| {
            let (fv, fg) = f[k];
            let (qv, qg) = q[k];
            (
                c1 * fv + c2 * qv,
                [
                    c1 * fg[0] + c2 * qg[0],
                    dc1 * fv + c1 * fg[1] + dc2 * qv + c2 * qg[1],
                ],
            )
        };
        [task(0), task(1)]
    }
}

impl Objective for OneOptimum {
    fn task_count(&self) -> usize {
        2
    }

    fn dimension(&self) -> usize {
        2
    }

    fn losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_point(theta, 2)?;
        Ok(Self::eval(theta).iter().map(|(v, _)| *v).collect())
    }

    fn gradients(&self, theta: &[f64]) -> Result<GradientSet> {
        check_point(theta, 2)?;
        GradientSet::new(Self::eval(theta).iter().map(|(_, g)| g.to_vec()).collect())
    }

    fn near_kink(&self, theta: &[f64], radius: f64) -> bool {
        let (x1, x2) = (theta[0], theta[1]);
        let th = x2.tanh();
        let u1 = 0.5 * (-x1 - 7.0) + th;
        let u2 = 0.5 * (-x1 + 3.0) - th + 2.0;
        x2.abs() < radius || u1.abs() < LOG_FLOOR + radius || u2.abs() < LOG_FLOOR + radius
    }
}

pub fn one_optimum_problem() -> Result<ProblemSpec> {
    Ok(ProblemSpec {
        name: "one_optimum".to_string(),
        task_weights: vec![1.0, 1.0],
        initial_points: points(&INITIAL_POINTS),
        known_optima: vec![KnownOptimum {
            location: ParamVector::new(GLOBAL_OPTIMUM.0.to_vec())?,
            loss: GLOBAL_OPTIMUM.1,
        }],
        objective: Arc::new(OneOptimum),
    })
}
