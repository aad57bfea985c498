//! Similarity-aware momentum gradient surgery (SAM-GS).
//!
//! Each call to [`SamGsState::step`] runs one iteration of the method:
//!
//! 1. `t ← t + 1`
//! 2. `Ψ ←` aggregate magnitude similarity of the task gradients
//! 3. `m_k ← β₁ m_k + (1 − β₁) g_k` for every task
//! 4. `h ← β₂ h + (1 − β₂)(1 − Ψ)² + ε`
//! 5. bias correction `m̂_k = m_k / (1 − β₁ᵗ)`, `ĥ = h / (1 − β₂ᵗ)`
//! 6. if `Ψ < γ` the gradients are equalised to the mean norm, otherwise each
//!    task is weighted elementwise by `|m̂_k| / (√ĥ + ε)`
//! 7. the update direction is `Σ_k w_k ⊙ g_k`
//!
//! The state never owns the parameters. Callers apply `θ ← θ − α · direction`
//! (or hand the direction to another optimiser).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{aggregate_from_norms, SimilarityAggregation, SimilarityReport};
use crate::vector::{is_finite, GradientSet};

/// Hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamGsConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Similarity threshold below which gradients are equalised.
    pub gamma: f64,
    pub epsilon: f64,
    /// Learning rate, applied by the caller.
    pub alpha: f64,
    pub similarity_mode: SimilarityAggregation,
}

impl Default for SamGsConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            gamma: 0.1,
            epsilon: 1e-8,
            alpha: 1e-3,
            similarity_mode: SimilarityAggregation::MeanAllPairs,
        }
    }
}

impl SamGsConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Equalisation,
    Momentum,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Equalisation => "equalisation",
            Branch::Momentum => "momentum",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equalisation" => Ok(Branch::Equalisation),
            "momentum" => Ok(Branch::Momentum),
            other => Err(Error::Parse(format!("unknown branch `{other}`"))),
        }
    }
}

/// Result of a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `Σ_k w_k ⊙ g_k`.
    pub update_direction: Vec<f64>,
    pub branch: Branch,
    /// `Ψ` under the configured aggregation.
    pub psi: f64,
    /// Per-task weight vectors; scalar equalisation weights are broadcast.
    pub weights: Vec<Vec<f64>>,
    /// Every reduction of the pairwise similarity matrix at this step.
    pub similarity: SimilarityReport,
}

/// Momenta, similarity momentum and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SamGsState {
    momenta: Vec<Vec<f64>>,
    similarity_momentum: f64,
    step: u64,
}

impl SamGsState {
    /// Zero momenta, `h = 0`, `t = 0`.
    pub fn new(task_count: usize, dimension: usize) -> Result<Self> {
        if task_count < 2 {
            return Err(Error::TooFewTasks(task_count));
        }
        if dimension == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Self {
            momenta: vec![vec![0.0; dimension]; task_count],
            similarity_momentum: 0.0,
            step: 0,
        })
    }

    pub fn task_count(&self) -> usize {
        self.momenta.len()
    }

    pub fn dimension(&self) -> usize {
        self.momenta[0].len()
    }

    pub fn momenta(&self) -> &[Vec<f64>] {
        &self.momenta
    }

    pub fn similarity_momentum(&self) -> f64 {
        self.similarity_momentum
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the state by one iteration and returns the update direction.
    ///
    /// On error the state is left untouched.
    pub fn step(&mut self, grads: &GradientSet, config: &SamGsConfig) -> Result<StepOutcome> {
        let k = self.task_count();
        if grads.task_count() != k {
            return Err(Error::TaskCount { expected: k, found: grads.task_count() });
        }
        if grads.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: grads.dimension(),
            });
        }
        let SamGsConfig { beta1, beta2, gamma, epsilon, .. } = *config;

        let t = self.step + 1;
        let norms = grads.norms();
        let psi = aggregate_from_norms(&norms, config.similarity_mode)?;
        if !psi.is_finite() {
            return Err(Error::non_finite("aggregate similarity"));
        }
        let similarity = SimilarityReport::from_norms(&norms)?;

        let momenta: Vec<Vec<f64>> = self
            .momenta
            .iter()
            .zip(grads.iter())
            .map(|(m, g)| {
                m.iter()
                    .zip(g)
                    .map(|(mi, gi)| beta1 * mi + (1.0 - beta1) * gi)
                    .collect()
            })
            .collect();
        let h = beta2 * self.similarity_momentum + (1.0 - beta2) * (1.0 - psi).powi(2) + epsilon;
        if !h.is_finite() {
            return Err(Error::non_finite("similarity momentum"));
        }
        if !momenta.iter().all(|m| is_finite(m)) {
            return Err(Error::non_finite("task momentum"));
        }

        let exponent = i32::try_from(t).unwrap_or(i32::MAX);
        let m_correction = 1.0 - beta1.powi(exponent);
        let h_hat = h / (1.0 - beta2.powi(exponent));

        let (branch, weights) = if psi < gamma {
            let scalars = equalisation_from_norms(&norms)?;
            let dim = self.dimension();
            (
                Branch::Equalisation,
                scalars.into_iter().map(|w| vec![w; dim]).collect::<Vec<_>>(),
            )
        } else {
            let denom = h_hat.sqrt() + epsilon;
            let weights = momenta
                .iter()
                .map(|m| m.iter().map(|mi| (mi / m_correction).abs() / denom).collect())
                .collect();
            (Branch::Momentum, weights)
        };

        let mut update_direction = vec![0.0; self.dimension()];
        for (w, g) in weights.iter().zip(grads.iter()) {
            for ((d, wi), gi) in update_direction.iter_mut().zip(w).zip(g) {
                *d += wi * gi;
            }
        }
        if !is_finite(&update_direction) {
            return Err(Error::non_finite("update direction"));
        }

        self.momenta = momenta;
        self.similarity_momentum = h;
        self.step = t;
        Ok(StepOutcome {
            update_direction,
            branch,
            psi,
            weights,
            similarity,
        })
    }

    /// Serialises state plus hyperparameters as a JSON checkpoint.
    ///
    /// ```text
    /// {
    ///   "config": { "beta1", "beta2", "gamma", "epsilon", "alpha", "similarity_mode" },
    ///   "task_count": K, "dimension": m,
    ///   "step": t, "similarity_momentum": h,
    ///   "momenta": [m_1[0], .., m_1[m-1], m_2[0], ..]   // K*m values, task-major
    /// }
    /// ```
    ///
    /// Floats are written in shortest round-trip form, so a restored state
    /// continues bit-identically.
    pub fn to_checkpoint(&self, config: &SamGsConfig) -> Result<String> {
        let cp = Checkpoint {
            config: *config,
            task_count: self.task_count(),
            dimension: self.dimension(),
            step: self.step,
            similarity_momentum: self.similarity_momentum,
            momenta: self.momenta.concat(),
        };
        Ok(serde_json::to_string_pretty(&cp)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<(SamGsConfig, SamGsState)> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        cp.config.validate()?;
        if cp.task_count < 2 {
            return Err(Error::TooFewTasks(cp.task_count));
        }
        if cp.dimension == 0 {
            return Err(Error::EmptyVector);
        }
        if cp.momenta.len() != cp.task_count * cp.dimension {
            return Err(Error::DimensionMismatch {
                expected: cp.task_count * cp.dimension,
                found: cp.momenta.len(),
            });
        }
        if !(cp.similarity_momentum >= 0.0 && cp.similarity_momentum.is_finite()) {
            return Err(Error::Parse("similarity_momentum must be finite and nonnegative".into()));
        }
        if cp.step == 0 && (cp.similarity_momentum != 0.0 || cp.momenta.iter().any(|&m| m != 0.0)) {
            return Err(Error::Parse("a state at step 0 must have zero momenta".into()));
        }
        let momenta = cp.momenta.chunks(cp.dimension).map(<[f64]>::to_vec).collect();
        Ok((
            cp.config,
            SamGsState {
                momenta,
                similarity_momentum: cp.similarity_momentum,
                step: cp.step,
            },
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: SamGsConfig,
    task_count: usize,
    dimension: usize,
    step: u64,
    similarity_momentum: f64,
    momenta: Vec<f64>,
}

fn equalisation_from_norms(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.iter().all(|&n| n == 0.0) {
        return Err(Error::AllZeroGradients);
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok(norms
        .iter()
        .map(|&n| if n == 0.0 { 0.0 } else { mean / n })
        .collect())
}

/// Scalar weights `mean_j ‖g_j‖ / ‖g_k‖` that rescale every non-zero gradient
/// to the mean norm. A zero gradient gets weight 0.
pub fn equalisation_weights(grads: &GradientSet) -> Result<Vec<f64>> {
    equalisation_from_norms(&grads.norms())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::l2_norm;
    use approx::assert_relative_eq;

    fn set(grads: &[&[f64]]) -> GradientSet {
        GradientSet::new(grads.iter().map(|g| g.to_vec()).collect()).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = SamGsState::new(2, 2).unwrap();
        assert_eq!(s.momenta(), &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(s.similarity_momentum(), 0.0);
        assert_eq!(s.step_count(), 0);
        assert_eq!(SamGsState::new(3, 2).unwrap().momenta().len(), 3);
        assert!(matches!(SamGsState::new(1, 2), Err(Error::TooFewTasks(1))));
    }

    #[test]
    fn equalisation_examples() {
        let w = equalisation_weights(&set(&[&[3.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_relative_eq!(w[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(w[1], 2.0);
        assert_eq!(equalisation_weights(&set(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            equalisation_weights(&set(&[&[10.0, 0.0], &[0.0, 0.0]])).unwrap(),
            vec![0.5, 0.0]
        );
        assert!(matches!(
            equalisation_weights(&set(&[&[0.0, 0.0], &[0.0, 0.0]])),
            Err(Error::AllZeroGradients)
        ));
    }

    #[test]
    fn first_step_identical_gradients_takes_momentum_branch() {
        let mut s = SamGsState::new(2, 2).unwrap();
        let out = s.step(&set(&[&[1.0, 0.0], &[1.0, 0.0]]), &SamGsConfig::default()).unwrap();
        assert_eq!(out.branch, Branch::Momentum);
        assert_eq!(out.psi, 1.0);
        // h = 1e-8, ĥ = 1e-6, w = 1 / (1e-3 + 1e-8)
        let w = 1.0 / (1e-3 + 1e-8);
        assert_relative_eq!(out.weights[0][0], w, max_relative = 1e-9);
        assert_eq!(out.weights[0][1], 0.0);
        assert_relative_eq!(out.update_direction[0], 2.0 * w, max_relative = 1e-9);
        assert_relative_eq!(out.update_direction[0], 1999.98, max_relative = 1e-6);
        assert_eq!(out.update_direction[1], 0.0);
    }

    #[test]
    fn dominated_gradients_take_equalisation_branch() {
        let cfg = SamGsConfig { gamma: 0.9, ..SamGsConfig::default() };
        let mut s = SamGsState::new(2, 2).unwrap();
        let out = s.step(&set(&[&[10.0, 0.0], &[0.0, 1.0]]), &cfg).unwrap();
        assert_relative_eq!(out.similarity.min_off_diagonal, 20.0 / 101.0, max_relative = 1e-15);
        assert_relative_eq!(out.psi, (2.0 + 40.0 / 101.0) / 4.0, max_relative = 1e-15);
        assert_eq!(out.branch, Branch::Equalisation);
        assert_relative_eq!(out.weights[0][0], 0.55, max_relative = 1e-15);
        assert_relative_eq!(out.weights[1][0], 5.5, max_relative = 1e-15);
        assert_relative_eq!(out.update_direction[0], 5.5, max_relative = 1e-15);
        assert_relative_eq!(out.update_direction[1], 5.5, max_relative = 1e-15);
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut s = SamGsState::new(2, 2).unwrap();
        let out = s.step(&set(&[&[0.0, 0.0], &[0.0, 0.0]]), &SamGsConfig::default()).unwrap();
        assert_eq!(out.branch, Branch::Momentum);
        assert_eq!(out.update_direction, vec![0.0, 0.0]);
    }

    #[test]
    fn step_rejects_task_count_mismatch_and_keeps_state() {
        let mut s = SamGsState::new(3, 2).unwrap();
        let before = s.clone();
        assert!(matches!(
            s.step(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), &SamGsConfig::default()),
            Err(Error::TaskCount { expected: 3, found: 2 })
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_direction_is_reported() {
        let mut s = SamGsState::new(2, 1).unwrap();
        let huge = set(&[&[1e153], &[1e153]]);
        let err = s.step(&huge, &SamGsConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref what) if what == "update direction"));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn bias_correction_recovers_constant_gradient() {
        let cfg = SamGsConfig::default();
        let g = set(&[&[0.3, -1.2], &[2.0, 0.7]]);
        let mut s = SamGsState::new(2, 2).unwrap();
        for t in 1..=50u64 {
            s.step(&g, &cfg).unwrap();
            let corr = 1.0 - cfg.beta1.powi(t as i32);
            for (m, gk) in s.momenta().iter().zip(g.iter()) {
                for (mi, gi) in m.iter().zip(gk) {
                    assert!((mi / corr - gi).abs() <= 1e-12 * gi.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn gamma_zero_never_equalises_and_gamma_one_always_does_with_unequal_norms() {
        let g = set(&[&[5.0, 0.0], &[0.0, 1.0]]);
        let mut s = SamGsState::new(2, 2).unwrap();
        let cfg = SamGsConfig { gamma: 0.0, ..SamGsConfig::default() };
        for _ in 0..10 {
            assert_eq!(s.step(&g, &cfg).unwrap().branch, Branch::Momentum);
        }
        let mut s = SamGsState::new(2, 2).unwrap();
        let cfg = SamGsConfig {
            gamma: 1.0,
            similarity_mode: SimilarityAggregation::MinOffDiagonal,
            ..SamGsConfig::default()
        };
        for _ in 0..10 {
            assert_eq!(s.step(&g, &cfg).unwrap().branch, Branch::Equalisation);
        }
    }

    #[test]
    fn smaller_similarity_inflates_h() {
        let cfg = SamGsConfig::default();
        let mut balanced = SamGsState::new(2, 2).unwrap();
        let mut skewed = balanced.clone();
        let a = balanced.step(&set(&[&[1.0, 1.0], &[1.0, 0.9]]), &cfg).unwrap();
        let b = skewed.step(&set(&[&[1.0, 1.0], &[10.0, 9.0]]), &cfg).unwrap();
        assert!(b.psi < a.psi);
        assert!(skewed.similarity_momentum() > balanced.similarity_momentum());
    }

    #[test]
    fn equalised_gradients_share_the_mean_norm() {
        let cfg = SamGsConfig { gamma: 1.0, ..SamGsConfig::default() };
        let g = set(&[&[4.0, -3.0], &[0.1, 0.2], &[-7.0, 1.0]]);
        let mut s = SamGsState::new(3, 2).unwrap();
        let out = s.step(&g, &cfg).unwrap();
        assert_eq!(out.branch, Branch::Equalisation);
        let mean = g.norms().iter().sum::<f64>() / 3.0;
        for (w, gk) in out.weights.iter().zip(g.iter()) {
            let scaled: Vec<f64> = gk.iter().zip(w).map(|(x, wi)| x * wi).collect();
            assert_relative_eq!(l2_norm(&scaled), mean, max_relative = 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = SamGsConfig { beta2: 0.9, ..SamGsConfig::default() };
        let mut s = SamGsState::new(2, 2).unwrap();
        let grads = [
            set(&[&[0.1, 0.2], &[-0.3, 0.4]]),
            set(&[&[1.0 / 3.0, 2.0], &[0.7, -0.01]]),
        ];
        for g in &grads {
            s.step(g, &cfg).unwrap();
        }
        let text = s.to_checkpoint(&cfg).unwrap();
        let (cfg2, mut restored) = SamGsState::from_checkpoint(&text).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(restored, s);
        let next = set(&[&[0.123456789, -9.87654321], &[1e-7, 3.0]]);
        let a = s.step(&next, &cfg).unwrap();
        let b = restored.step(&next, &cfg2).unwrap();
        assert_eq!(a.update_direction, b.update_direction);
    }

    #[test]
    fn checkpoint_rejects_inconsistent_state() {
        let bad = r#"{"config":{"beta1":0.9,"beta2":0.99,"gamma":0.1,"epsilon":1e-8,"alpha":0.001,
            "similarity_mode":"mean_all_pairs"},"task_count":2,"dimension":2,"step":3,
            "similarity_momentum":0.1,"momenta":[1.0,2.0,3.0]}"#;
        assert!(matches!(
            SamGsState::from_checkpoint(bad),
            Err(Error::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SamGsConfig::default().validate().is_ok());
        assert!(SamGsConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(SamGsConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(SamGsConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamGsConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
    }
}
