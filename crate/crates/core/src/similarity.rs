//! Pairwise gradient similarity measures and their aggregation over tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, l2_norm, GradientSet};

/// How pairwise magnitude similarities are reduced to the scalar `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregation {
    /// Mean over all `K²` ordered pairs, diagonal included.
    #[default]
    MeanAllPairs,
    /// Minimum over pairs `i != j`.
    MinOffDiagonal,
}

impl fmt::Display for SimilarityAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityAggregation::MeanAllPairs => "mean_all_pairs",
            SimilarityAggregation::MinOffDiagonal => "min_off_diagonal",
        })
    }
}

impl FromStr for SimilarityAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_all_pairs" | "mean" => Ok(Self::MeanAllPairs),
            "min_off_diagonal" | "min" => Ok(Self::MinOffDiagonal),
            other => Err(Error::config(format!("unknown similarity mode `{other}`"))),
        }
    }
}

/// Cosine of the angle between two gradients. Negative values mark an
/// angle-based conflict.
pub fn cosine_similarity(g_i: &[f64], g_j: &[f64]) -> Result<f64> {
    let d = dot(g_i, g_j)?;
    let (ni, nj) = (l2_norm(g_i), l2_norm(g_j));
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((d / (ni * nj)).clamp(-1.0, 1.0))
}

/// `ψ = 2‖a‖‖b‖ / (‖a‖² + ‖b‖²)` computed from the two norms.
///
/// Returns `None` when both norms are zero.
pub fn magnitude_similarity_from_norms(n_i: f64, n_j: f64) -> Option<f64> {
    let denom = n_i * n_i + n_j * n_j;
    if denom == 0.0 {
        return None;
    }
    Some(2.0 * n_i * n_j / denom)
}

/// Magnitude similarity of two gradients, in `[0, 1]` and equal to 1 iff the
/// norms coincide. Direction plays no role.
pub fn magnitude_similarity(g_i: &[f64], g_j: &[f64]) -> Result<f64> {
    if g_i.len() != g_j.len() {
        return Err(Error::DimensionMismatch {
            expected: g_i.len(),
            found: g_j.len(),
        });
    }
    magnitude_similarity_from_norms(l2_norm(g_i), l2_norm(g_j)).ok_or(Error::BothZero)
}

// Two vanished gradients count as identical in magnitude.
fn pair_similarity(n_i: f64, n_j: f64) -> f64 {
    magnitude_similarity_from_norms(n_i, n_j).unwrap_or(1.0)
}

/// `Ψ` for a set of precomputed task-gradient norms.
pub fn aggregate_from_norms(norms: &[f64], mode: SimilarityAggregation) -> Result<f64> {
    let k = norms.len();
    if k < 2 {
        return Err(Error::TooFewTasks(k));
    }
    let psi = match mode {
        SimilarityAggregation::MeanAllPairs => {
            let mut sum = 0.0;
            for i in 0..k {
                for j in 0..k {
                    sum += if i == j {
                        1.0
                    } else {
                        pair_similarity(norms[i], norms[j])
                    };
                }
            }
            sum / (k * k) as f64
        }
        SimilarityAggregation::MinOffDiagonal => {
            let mut min = f64::INFINITY;
            for i in 0..k {
                for j in (i + 1)..k {
                    min = min.min(pair_similarity(norms[i], norms[j]));
                }
            }
            min
        }
    };
    Ok(psi)
}

/// Aggregate magnitude similarity `Ψ` of a gradient set.
pub fn aggregate_similarity(grads: &GradientSet, mode: SimilarityAggregation) -> Result<f64> {
    aggregate_from_norms(&grads.norms(), mode)
}

/// All three reductions of the pairwise similarity matrix, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub mean_all_pairs: f64,
    pub mean_off_diagonal: f64,
    pub min_off_diagonal: f64,
}

impl SimilarityReport {
    pub fn from_norms(norms: &[f64]) -> Result<Self> {
        let k = norms.len();
        let mean_all_pairs = aggregate_from_norms(norms, SimilarityAggregation::MeanAllPairs)?;
        let min_off_diagonal = aggregate_from_norms(norms, SimilarityAggregation::MinOffDiagonal)?;
        let kf = k as f64;
        // Diagonal contributes exactly K ones to the full sum.
        let mean_off_diagonal = (mean_all_pairs * kf * kf - kf) / (kf * (kf - 1.0));
        Ok(Self {
            mean_all_pairs,
            mean_off_diagonal,
            min_off_diagonal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(grads: &[&[f64]]) -> GradientSet {
        GradientSet::new(grads.iter().map(|g| g.to_vec()).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_relative_eq!(
            cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-15
        );
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(magnitude_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            magnitude_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(),
            0.6,
            max_relative = 1e-15
        );
        assert_eq!(magnitude_similarity(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            magnitude_similarity(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::BothZero)
        ));
    }

    #[test]
    fn aggregate_examples() {
        let equal = set(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(aggregate_similarity(&equal, SimilarityAggregation::MeanAllPairs).unwrap(), 1.0);
        assert_eq!(aggregate_similarity(&equal, SimilarityAggregation::MinOffDiagonal).unwrap(), 1.0);

        let unequal = set(&[&[1.0, 0.0], &[0.0, 3.0]]);
        assert_relative_eq!(
            aggregate_similarity(&unequal, SimilarityAggregation::MeanAllPairs).unwrap(),
            0.8,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            aggregate_similarity(&unequal, SimilarityAggregation::MinOffDiagonal).unwrap(),
            0.6,
            max_relative = 1e-15
        );
    }

    #[test]
    fn aggregate_requires_two_tasks() {
        assert!(matches!(
            aggregate_from_norms(&[1.0], SimilarityAggregation::MeanAllPairs),
            Err(Error::TooFewTasks(1))
        ));
    }

    #[test]
    fn vanished_pairs_do_not_poison_psi() {
        let zeros = set(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(aggregate_similarity(&zeros, SimilarityAggregation::MeanAllPairs).unwrap(), 1.0);
        assert_eq!(aggregate_similarity(&zeros, SimilarityAggregation::MinOffDiagonal).unwrap(), 1.0);
    }

    #[test]
    fn report_off_diagonal_mean() {
        let r = SimilarityReport::from_norms(&[1.0, 3.0]).unwrap();
        assert_relative_eq!(r.mean_off_diagonal, 0.6, max_relative = 1e-12);
        let r = SimilarityReport::from_norms(&[1.0, 1.0, 3.0]).unwrap();
        // pairs: (1,1)=1, (1,3)=0.6 twice
        assert_relative_eq!(r.mean_off_diagonal, (1.0 + 0.6 + 0.6) / 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.min_off_diagonal, 0.6, max_relative = 1e-15);
    }

    #[test]
    fn mean_with_identical_norms_is_exactly_one() {
        for k in 2..8 {
            let norms = vec![0.37; k];
            assert_eq!(aggregate_from_norms(&norms, SimilarityAggregation::MeanAllPairs).unwrap(), 1.0);
        }
    }
}
