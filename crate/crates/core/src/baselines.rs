//! Reference aggregators: linear sum (optionally driven by Adam), PCGrad,
//! two-task MGDA and two-task CAGrad.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::vector::{dot, is_finite, l2_norm, GradientSet};

/// Weighted sum `Σ_k weight_k · g_k`.
pub fn ls_aggregate(grads: &GradientSet, task_weights: &[f64]) -> Result<Vec<f64>> {
    if task_weights.len() != grads.task_count() {
        return Err(Error::TaskCount {
            expected: grads.task_count(),
            found: task_weights.len(),
        });
    }
    if !is_finite(task_weights) {
        return Err(Error::non_finite("task weights"));
    }
    let mut out = vec![0.0; grads.dimension()];
    for (g, w) in grads.iter().zip(task_weights) {
        for (o, x) in out.iter_mut().zip(g) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl AdamState {
    /// Standard defaults: `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn new(dimension: usize, alpha: f64) -> Self {
        Self::with_params(dimension, alpha, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(dimension: usize, alpha: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; dimension],
            second_moment: vec![0.0; dimension],
            step: 0,
            beta1,
            beta2,
            epsilon,
            alpha,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Feeds one gradient and returns the delta to subtract from the parameters.
    pub fn step(&mut self, direction: &[f64]) -> Result<Vec<f64>> {
        if direction.len() != self.first_moment.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                found: direction.len(),
            });
        }
        if !is_finite(direction) {
            return Err(Error::non_finite("adam input"));
        }
        let t = self.step + 1;
        let exponent = i32::try_from(t).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(exponent);
        let c2 = 1.0 - self.beta2.powi(exponent);
        let mut delta = Vec::with_capacity(direction.len());
        for ((m, v), g) in self
            .first_moment
            .iter_mut()
            .zip(self.second_moment.iter_mut())
            .zip(direction)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            delta.push(self.alpha * (*m / c1) / ((*v / c2).sqrt() + self.epsilon));
        }
        self.step = t;
        Ok(delta)
    }
}

/// Order in which PCGrad projects each gradient against the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcGradOrder {
    #[default]
    Ascending,
    /// Reshuffled on every call from the caller's RNG.
    Shuffled,
}

/// Ascending order, or a fresh permutation of `0..k` drawn from `rng`.
pub fn pcgrad_order<R: Rng + ?Sized>(k: usize, policy: PcGradOrder, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    if policy == PcGradOrder::Shuffled {
        order.shuffle(rng);
    }
    order
}

/// Projects each task gradient off every other gradient it conflicts with
/// (negative inner product), visiting the others in `order`. Returns the
/// surgered gradients in task order.
pub fn pcgrad_surgered(grads: &GradientSet, order: &[usize]) -> Result<Vec<Vec<f64>>> {
    let k = grads.task_count();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..k).collect::<Vec<_>>() {
        return Err(Error::config(format!("PCGrad order must be a permutation of 0..{k}")));
    }
    let norms_sq: Vec<f64> = grads.iter().map(|g| l2_norm(g).powi(2)).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut surgered = grads.get(i).to_vec();
        for &j in order {
            if j == i || norms_sq[j] == 0.0 {
                continue;
            }
            let gj = grads.get(j);
            let d = dot(&surgered, gj)?;
            if d < 0.0 {
                let c = d / norms_sq[j];
                for (s, x) in surgered.iter_mut().zip(gj) {
                    *s -= c * x;
                }
            }
        }
        out.push(surgered);
    }
    Ok(out)
}

/// Sum of the [`pcgrad_surgered`] gradients.
pub fn pcgrad_aggregate(grads: &GradientSet, order: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grads.dimension()];
    for s in pcgrad_surgered(grads, order)? {
        for (o, x) in out.iter_mut().zip(&s) {
            *o += x;
        }
    }
    Ok(out)
}

fn require_two(grads: &GradientSet) -> Result<(&[f64], &[f64])> {
    if grads.task_count() != 2 {
        return Err(Error::TaskCount { expected: 2, found: grads.task_count() });
    }
    Ok((grads.get(0), grads.get(1)))
}

/// Mixing weight of the min-norm point of the segment `[g₂, g₁]`.
pub fn mgda_weight(g1: &[f64], g2: &[f64]) -> Result<f64> {
    let diff: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| a - b).collect();
    let denom = dot(&diff, &diff)?;
    if denom == 0.0 {
        return Ok(0.5);
    }
    let num = -dot(&diff, g2)?;
    Ok((num / denom).clamp(0.0, 1.0))
}

/// Two-task MGDA: the minimum-norm element `λ g₁ + (1 − λ) g₂` of the convex
/// hull of the gradients.
pub fn mgda_aggregate(grads: &GradientSet) -> Result<Vec<f64>> {
    let (g1, g2) = require_two(grads)?;
    if g1 == g2 {
        return Ok(g1.to_vec());
    }
    let lambda = mgda_weight(g1, g2)?;
    Ok(g1
        .iter()
        .zip(g2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

const CAGRAD_GRID: usize = 10_000;

/// Two-task CAGrad.
///
/// With `g₀` the mean gradient, the mixing weight `w` minimises
/// `g_w · g₀ + c‖g₀‖‖g_w‖` over a uniform grid on `[0, 1]` (spacing 1e-4); the
/// returned direction is `(g₀ + c‖g₀‖ / ‖g_w‖ · g_w) / (1 + c)`.
pub fn cagrad_aggregate(grads: &GradientSet, c: f64) -> Result<Vec<f64>> {
    let (g1, g2) = require_two(grads)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::config(format!("CAGrad c must be nonnegative, got {c}")));
    }
    let mean: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| (a + b) / 2.0).collect();
    if c == 0.0 {
        return Ok(mean);
    }
    // Everything below needs only the 2x2 Gram matrix.
    let (a11, a12, a22) = (dot(g1, g1)?, dot(g1, g2)?, dot(g2, g2)?);
    let g0_norm = l2_norm(&mean);
    let radius = c * g0_norm;
    let objective = |w: f64| {
        let v = 1.0 - w;
        let gw_dot_g0 = 0.5 * (w * (a11 + a12) + v * (a12 + a22));
        let gw_sq = w * w * a11 + 2.0 * w * v * a12 + v * v * a22;
        gw_dot_g0 + radius * gw_sq.max(0.0).sqrt()
    };
    let mut best_w = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..=CAGRAD_GRID {
        let w = i as f64 / CAGRAD_GRID as f64;
        let f = objective(w);
        if f < best {
            best = f;
            best_w = w;
        }
    }
    let gw: Vec<f64> = g1
        .iter()
        .zip(g2)
        .map(|(a, b)| best_w * a + (1.0 - best_w) * b)
        .collect();
    let gw_norm = l2_norm(&gw);
    let lambda = if gw_norm > 0.0 { radius / gw_norm } else { 0.0 };
    Ok(mean
        .iter()
        .zip(&gw)
        .map(|(m, x)| (m + lambda * x) / (1.0 + c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(grads: &[&[f64]]) -> GradientSet {
        GradientSet::new(grads.iter().map(|g| g.to_vec()).collect()).unwrap()
    }

    #[test]
    fn ls_examples() {
        let g = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(ls_aggregate(&g, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(ls_aggregate(&g, &[2.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        let opposed = set(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(ls_aggregate(&opposed, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(ls_aggregate(&g, &[1.0]).is_err());
    }

    #[test]
    fn adam_first_step() {
        let mut a = AdamState::new(2, 1e-3);
        let d = a.step(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(d[0], 1e-3 / (1.0 + 1e-8), max_relative = 1e-12);
        assert_eq!(d[1], 0.0);
        let mut z = AdamState::new(2, 1e-3);
        assert_eq!(z.step(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_agree_in_sign_and_approach_alpha() {
        let mut a = AdamState::new(2, 1e-3);
        let first = a.step(&[0.5, -2.0]).unwrap();
        let second = a.step(&[0.5, -2.0]).unwrap();
        for (x, y) in first.iter().zip(&second) {
            assert_eq!(x.signum(), y.signum());
        }
        let mut last = second;
        for _ in 0..5000 {
            last = a.step(&[0.5, -2.0]).unwrap();
        }
        for x in last {
            assert!((x.abs() - 1e-3).abs() <= 0.05 * 1e-3);
        }
        assert!(a.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut a = AdamState::new(2, 1e-3);
        assert!(a.step(&[1.0]).is_err());
        assert!(a.step(&[f64::NAN, 1.0]).is_err());
        assert_eq!(a.step_count(), 0);
    }

    #[test]
    fn pcgrad_examples() {
        let conflicting = set(&[&[1.0, 0.0], &[-1.0, 1.0]]);
        let out = pcgrad_aggregate(&conflicting, &[0, 1]).unwrap();
        assert_relative_eq!(out[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(out[1], 1.5, max_relative = 1e-15);
        assert_eq!(pcgrad_aggregate(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pcgrad_aggregate(&set(&[&[1.0, 1.0], &[1.0, 1.0]]), &[1, 0]).unwrap(), vec![2.0, 2.0]);
        assert!(pcgrad_aggregate(&conflicting, &[0, 0]).is_err());
    }

    #[test]
    fn pcgrad_shuffle_is_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            assert_eq!(
                pcgrad_order(5, PcGradOrder::Shuffled, &mut a),
                pcgrad_order(5, PcGradOrder::Shuffled, &mut b)
            );
        }
        assert_eq!(pcgrad_order(4, PcGradOrder::Ascending, &mut a), vec![0, 1, 2, 3]);
    }

    #[test]
    fn mgda_examples() {
        let d = mgda_aggregate(&set(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(d, vec![0.5, 0.5]);
        assert_eq!(mgda_aggregate(&set(&[&[2.0, 0.0], &[2.0, 0.0]])).unwrap(), vec![2.0, 0.0]);
        assert_eq!(mgda_aggregate(&set(&[&[1.0, 0.0], &[3.0, 0.0]])).unwrap(), vec![1.0, 0.0]);
        let three = set(&[&[1.0], &[2.0], &[3.0]]);
        assert!(matches!(mgda_aggregate(&three), Err(Error::TaskCount { expected: 2, found: 3 })));
    }

    #[test]
    fn cagrad_examples() {
        let g = set(&[&[0.3, -1.0], &[2.0, 0.25]]);
        assert_eq!(cagrad_aggregate(&g, 0.0).unwrap(), vec![(0.3 + 2.0) / 2.0, (-1.0 + 0.25) / 2.0]);

        let same = set(&[&[1.5, -0.5], &[1.5, -0.5]]);
        for c in [0.0, 0.4, 1.0, 10.0] {
            let d = cagrad_aggregate(&same, c).unwrap();
            assert_relative_eq!(d[0], 1.5, max_relative = 1e-12);
            assert_relative_eq!(d[1], -0.5, max_relative = 1e-12);
        }

        assert!(cagrad_aggregate(&g, -0.1).is_err());
    }

    #[test]
    fn cagrad_large_c_points_at_min_norm_element() {
        let g = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = cagrad_aggregate(&g, 1e6).unwrap();
        let m = mgda_aggregate(&g).unwrap();
        let cos = dot(&d, &m).unwrap() / (l2_norm(&d) * l2_norm(&m));
        assert!(cos > 1.0 - 1e-9, "cos = {cos}");

        let skew = set(&[&[3.0, 1.0], &[-1.0, 0.5]]);
        let d = cagrad_aggregate(&skew, 1e6).unwrap();
        let m = mgda_aggregate(&skew).unwrap();
        let cos = dot(&d, &m).unwrap() / (l2_norm(&d) * l2_norm(&m));
        assert!(cos > 1.0 - 1e-6, "cos = {cos}");
    }
}
