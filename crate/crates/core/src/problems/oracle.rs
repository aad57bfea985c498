//! Brute-force optimum finder: dense grid scan of the weighted objective
//! followed by compass-search polishing of each candidate basin.

use super::{weighted_sum, KnownOptimum, ProblemSpec};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub lower: f64,
    pub upper: f64,
    pub resolution: f64,
    /// Candidates whose grid value is within this much of the grid minimum are polished.
    pub candidate_margin: f64,
    /// Polished minima within this much of the best are reported as global.
    pub tie_tolerance: f64,
    pub execution: Execution,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            lower: -15.0,
            upper: 15.0,
            resolution: 0.01,
            candidate_margin: 0.5,
            tie_tolerance: 1e-6,
            execution: Execution::Parallel,
        }
    }
}

impl OracleConfig {
    /// Cheaper scan for re-weighted problems; polishing recovers the precision.
    pub fn coarse() -> Self {
        Self { resolution: 0.05, ..Self::default() }
    }

    fn axis(&self) -> Result<Vec<f64>> {
        if !(self.resolution > 0.0 && self.upper > self.lower) {
            return Err(Error::config("oracle grid needs resolution > 0 and upper > lower"));
        }
        let n = ((self.upper - self.lower) / self.resolution).round() as usize + 1;
        Ok((0..n).map(|i| self.lower + i as f64 * self.resolution).collect())
    }
}

/// Weighted loss sampled on a square grid, stored row-major with `θ₂` as the row.
#[derive(Debug, Clone)]
pub struct LossGrid {
    pub axis: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn scan(spec: &ProblemSpec, cfg: &OracleConfig) -> Result<LossGrid> {
    if spec.dimension() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: spec.dimension() });
    }
    let axis = cfg.axis()?;
    let rows = par::map(cfg.execution, &axis, |&y| {
        axis.iter()
            .map(|&x| spec.combined_loss(&[x, y]))
            .collect::<Result<Vec<f64>>>()
    });
    let values = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LossGrid { axis, values })
}

fn loss_at(spec: &ProblemSpec, p: &[f64]) -> f64 {
    spec.objective
        .losses(p)
        .map(|l| weighted_sum(&l, &spec.task_weights))
        .unwrap_or(f64::INFINITY)
}

/// Derivative-free descent: try `±step` along each axis, halve on failure.
pub fn compass_search(spec: &ProblemSpec, start: &[f64], initial_step: f64) -> (Vec<f64>, f64) {
    let mut x = start.to_vec();
    let mut fx = loss_at(spec, &x);
    let mut step = initial_step;
    while step > 1e-13 {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += dir * step;
                let fy = loss_at(spec, &y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (x, fx)
}

/// All global minimisers of the weighted objective inside the scan window.
pub fn locate_optima(spec: &ProblemSpec, cfg: &OracleConfig) -> Result<Vec<KnownOptimum>> {
    let grid = scan(spec, cfg)?;
    let n = grid.axis.len();
    let best = grid
        .values
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let mut candidates = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let v = grid.values[r][c];
            if v > best + cfg.candidate_margin {
                continue;
            }
            let is_local_min = (r.saturating_sub(1)..(r + 2).min(n))
                .all(|rr| (c.saturating_sub(1)..(c + 2).min(n)).all(|cc| grid.values[rr][cc] >= v));
            if is_local_min {
                candidates.push([grid.axis[c], grid.axis[r]]);
            }
        }
    }

    let mut polished: Vec<(Vec<f64>, f64)> = par::map(cfg.execution, &candidates, |p| {
        compass_search(spec, p, cfg.resolution)
    });
    polished.sort_by(|a, b| a.1.total_cmp(&b.1));
    let global = polished.first().map(|p| p.1).ok_or_else(|| Error::config("oracle found no minimum"))?;

    let mut optima: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, f) in polished {
        if f > global + cfg.tie_tolerance {
            break;
        }
        let duplicate = optima
            .iter()
            .any(|(y, _)| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-3);
        if !duplicate {
            optima.push((x, f));
        }
    }
    optima.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
    optima
        .into_iter()
        .map(|(x, loss)| Ok(KnownOptimum { location: ParamVector::new(x)?, loss }))
        .collect()
}
