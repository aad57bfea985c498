//! Two-task toy problem with a pair of mirror-image global optima, a local
//! optimum and a saddle between them.
//!
//! ```text
//! L₁ = c₁ f₁ + c₂ g₁          L₂ = c₁ f₂ + c₂ g₂
//! f₁ = ln max(|0.5(−θ₁−7) − tanh(−θ₂)|, 5e-6) + 6
//! f₂ = ln max(|0.5(−θ₁+3) − tanh(−θ₂) + 2|, 5e-6) + 6
//! c₁ = max(tanh(0.5θ₂), 0)    c₂ = max(tanh(−0.5θ₂), 0)
//! g₁ = 0.1 Σ((θᵢ−d₁ᵢ)/4)⁶ − Σ((θᵢ−d₂ᵢ)/4)⁴ − 1.5 Σ((θᵢ−d₂ᵢ)/4)² + 1.5
//! ```
//!
//! `g₂` is `g₁` with `θ + d` in place of `θ − d`.

use std::sync::Arc;

use super::{check_point, floored_log, gate, points, KnownOptimum, Objective, ProblemSpec, LOG_FLOOR};
use crate::error::Result;
use crate::vector::{GradientSet, ParamVector};

pub const D1: [f64; 2] = [5.45, 0.0];
pub const D2: [f64; 2] = [5.5, 0.0];

pub const INITIAL_POINTS: [[f64; 2]; 6] = [
    [-3.5, 5.5],
    [3.5, 5.5],
    [-6.5, 2.5],
    [6.5, 2.5],
    [0.0, 10.0],
    [0.0, -8.0],
];

/// Global minimisers of `L₁ + L₂`, written out by `examples/optima_oracle.rs`.
pub const GLOBAL_OPTIMA: [([f64; 2], f64); 2] = [
    ([-5.454_570_465, -10.842_613_849_639_896], -74.133_988_152_760_4),
    ([5.454_570_465, -10.842_613_849_639_896], -74.133_988_152_760_4),
];

#[derive(Debug, Clone, Copy, Default)]
pub struct TwoOptima;

// Polynomial basin term and its gradient; `sign` is -1 for g₁ and +1 for g₂.
fn basin(theta: &[f64], sign: f64) -> (f64, [f64; 2]) {
    let mut value = 1.5;
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let a = (theta[i] + sign * D1[i]) / 4.0;
        let b = (theta[i] + sign * D2[i]) / 4.0;
        value += 0.1 * a.powi(6) - b.powi(4) - 1.5 * b * b;
        grad[i] = 0.15 * a.powi(5) - b.powi(3) - 0.75 * b;
    }
    (value, grad)
}

impl TwoOptima {
    fn parts(theta: &[f64]) -> Parts {
        let (t1, t2) = (theta[0], theta[1]);
        let th = t2.tanh();
        let sech2 = 1.0 - th * th;
        // tanh(−θ₂) = −tanh θ₂
        let u1 = 0.5 * (-t1 - 7.0) + th;
        let u2 = 0.5 * (-t1 + 3.0) + th + 2.0;
        let (f1, df1) = floored_log(u1);
        let (f2, df2) = floored_log(u2);
        let (c1, dc1) = gate(0.5, t2);
        let (c2, dc2) = gate(-0.5, t2);
        let (g1, dg1) = basin(theta, -1.0);
        let (g2, dg2) = basin(theta, 1.0);
        Parts {
            f: [f1, f2],
            df: [[-0.5 * df1, sech2 * df1], [-0.5 * df2, sech2 * df2]],
            c: [c1, c2],
            dc: [dc1, dc2],
            g: [g1, g2],
            dg: [dg1, dg2],
        }
    }
}

struct Parts {
    f: [f64; 2],
    df: [[f64; 2]; 2],
    c: [f64; 2],
    dc: [f64; 2],
    g: [f64; 2],
    dg: [[f64; 2]; 2],
}

impl Objective for TwoOptima {
    fn task_count(&self) -> usize {
        2
    }

    fn dimension(&self) -> usize {
        2
    }

    fn losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_point(theta, 2)?;
        let p = Self::parts(theta);
        Ok((0..2).map(|k| p.c[0] * p.f[k] + p.c[1] * p.g[k]).collect())
    }

    fn gradients(&self, theta: &[f64]) -> Result<GradientSet> {
        check_point(theta, 2)?;
        let p = Self::parts(theta);
        let grads = (0..2)
            .map(|k| {
                vec![
                    p.c[0] * p.df[k][0] + p.c[1] * p.dg[k][0],
                    p.dc[0] * p.f[k] + p.c[0] * p.df[k][1] + p.dc[1] * p.g[k] + p.c[1] * p.dg[k][1],
                ]
            })
            .collect();
        GradientSet::new(grads)
    }

    fn near_kink(&self, theta: &[f64], radius: f64) -> bool {
        let (t1, t2) = (theta[0], theta[1]);
        let th = t2.tanh();
        let u1 = 0.5 * (-t1 - 7.0) + th;
        let u2 = 0.5 * (-t1 + 3.0) + th + 2.0;
        t2.abs() < radius || u1.abs() < LOG_FLOOR + radius || u2.abs() < LOG_FLOOR + radius
    }
}

pub fn two_optima_problem() -> ProblemSpec {
    ProblemSpec {
        name: "two_optima".to_string(),
        task_weights: vec![1.0, 1.0],
        initial_points: points(&INITIAL_POINTS),
        known_optima: GLOBAL_OPTIMA
            .iter()
            .map(|(x, loss)| KnownOptimum {
                location: ParamVector::new(x.to_vec()).expect("finite constant"),
                loss: *loss,
            })
            .collect(),
        objective: Arc::new(TwoOptima),
    }
}
