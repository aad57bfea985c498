//! Dense `f64` vector arithmetic shared by the aggregators, problems and runner.
//!
//! Free functions work on slices so hot loops can reuse buffers; [`ParamVector`]
//! and [`GradientSet`] are the validated value types passed across module
//! boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Inner product `Σ aᵢbᵢ`.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Euclidean norm.
pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Returns `accumulator + coefficient * v`.
pub fn scale_add(accumulator: &[f64], coefficient: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_dims(accumulator.len(), v.len())?;
    Ok(accumulator
        .iter()
        .zip(v)
        .map(|(a, x)| a + coefficient * x)
        .collect())
}

/// In-place `accumulator += coefficient * v`.
pub fn scale_add_assign(accumulator: &mut [f64], coefficient: f64, v: &[f64]) -> Result<()> {
    check_dims(accumulator.len(), v.len())?;
    for (a, x) in accumulator.iter_mut().zip(v) {
        *a += coefficient * x;
    }
    Ok(())
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// A point in parameter space. Non-empty and finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if !is_finite(&values) {
            return Err(Error::non_finite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Result<Self> {
        Self::new(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Euclidean distance to another point of the same dimension.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self.dimension(), other.dimension())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Moves the point by `-delta`, failing if the result would leave the finite domain.
    pub fn descend(&mut self, delta: &[f64]) -> Result<()> {
        let next = scale_add(&self.0, -1.0, delta)?;
        if !is_finite(&next) {
            return Err(Error::non_finite("parameter update"));
        }
        self.0 = next;
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-task gradients `g_1..g_K` over one parameter space.
///
/// Invariants: `K >= 2`, every gradient has the same non-zero dimension, all
/// entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn new(grads: Vec<Vec<f64>>) -> Result<Self> {
        if grads.len() < 2 {
            return Err(Error::TooFewTasks(grads.len()));
        }
        let dim = grads[0].len();
        if dim == 0 {
            return Err(Error::EmptyVector);
        }
        for (k, g) in grads.iter().enumerate() {
            check_dims(dim, g.len())?;
            if !is_finite(g) {
                return Err(Error::non_finite(format!("gradient of task {}", k + 1)));
            }
        }
        Ok(Self { grads })
    }

    pub fn task_count(&self) -> usize {
        self.grads.len()
    }

    pub fn dimension(&self) -> usize {
        self.grads[0].len()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.grads[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.iter().map(l2_norm).collect()
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.grads
    }
}
