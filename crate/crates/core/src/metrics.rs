//! Benchmark metrics: relative multi-task degradation (`Δm%`), mean rank,
//! and convergence classification of toy-problem trajectories.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::KnownOptimum;
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub value: f64,
    pub higher_is_better: bool,
}

impl TaskMetric {
    pub fn higher(value: f64) -> Self {
        Self { value, higher_is_better: true }
    }

    pub fn lower(value: f64) -> Self {
        Self { value, higher_is_better: false }
    }
}

/// `(1/K) Σ_k (−1)^{ν_k} (m_k − s_k) / s_k · 100`, with `ν_k = 1` for
/// higher-is-better metrics. Lower is better.
///
/// The direction flags are taken from `mtl`.
pub fn delta_m_percent(mtl: &[TaskMetric], stl: &[TaskMetric]) -> Result<f64> {
    if mtl.len() != stl.len() {
        return Err(Error::TaskCount { expected: stl.len(), found: mtl.len() });
    }
    if mtl.is_empty() {
        return Err(Error::config("Δm needs at least one task"));
    }
    let mut sum = 0.0;
    for (k, (m, s)) in mtl.iter().zip(stl).enumerate() {
        if !(m.value.is_finite() && s.value.is_finite()) {
            return Err(Error::non_finite(format!("metric of task {}", k + 1)));
        }
        if s.value == 0.0 {
            return Err(Error::ZeroBaseline { task: k + 1 });
        }
        let sign = if m.higher_is_better { -1.0 } else { 1.0 };
        sum += sign * (m.value - s.value) / s.value;
    }
    Ok(sum / mtl.len() as f64 * 100.0)
}

/// Methods × tasks table with one direction flag per task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub methods: Vec<String>,
    pub tasks: Vec<String>,
    pub higher_is_better: Vec<bool>,
    /// `values[method][task]`
    pub values: Vec<Vec<f64>>,
}

impl MetricTable {
    /// Parses the comma-separated layout
    ///
    /// ```text
    /// method,mIoU,PixAcc,AbsErr,RelErr
    /// direction,higher,higher,lower,lower
    /// STL,74.01,93.16,0.0125,27.77
    /// LS,71.0,91.7,0.0161,33.8
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(input);
        let head = rdr.headers()?.clone();
        let tasks: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
        if tasks.is_empty() {
            return Err(Error::Parse("metric table has no task columns".into()));
        }
        let mut rows = rdr.records();
        let dir = rows
            .next()
            .ok_or_else(|| Error::Parse("metric table is missing the direction row".into()))??;
        if dir.get(0) != Some("direction") {
            return Err(Error::Parse("second row must start with `direction`".into()));
        }
        let higher_is_better = dir
            .iter()
            .skip(1)
            .map(|d| match d {
                "higher" | "up" | "max" => Ok(true),
                "lower" | "down" | "min" => Ok(false),
                other => Err(Error::Parse(format!("unknown direction `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut methods = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            let row = row?;
            methods.push(row[0].to_string());
            let v = row
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            values.push(v);
        }
        Ok(Self { methods, tasks, higher_is_better, values })
    }

    pub fn method_index(&self, name: &str) -> Result<usize> {
        self.methods
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn row(&self, method: usize) -> Vec<TaskMetric> {
        self.values[method]
            .iter()
            .zip(&self.higher_is_better)
            .map(|(&value, &higher_is_better)| TaskMetric { value, higher_is_better })
            .collect()
    }

    /// A copy without the named methods (e.g. the single-task baseline).
    pub fn without(&self, excluded: &[&str]) -> Self {
        let keep: Vec<usize> = (0..self.methods.len())
            .filter(|&i| !excluded.contains(&self.methods[i].as_str()))
            .collect();
        Self {
            methods: keep.iter().map(|&i| self.methods[i].clone()).collect(),
            tasks: self.tasks.clone(),
            higher_is_better: self.higher_is_better.clone(),
            values: keep.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }
}

/// Average over tasks of each method's rank (1 = best). Tied methods share
/// the mean of the positions they occupy.
pub fn mean_rank(table: &MetricTable) -> Result<Vec<f64>> {
    let n = table.methods.len();
    if n < 2 {
        return Err(Error::config("mean rank needs at least two methods"));
    }
    if table.tasks.is_empty() {
        return Err(Error::config("mean rank needs at least one task"));
    }
    for row in &table.values {
        if row.len() != table.tasks.len() {
            return Err(Error::DimensionMismatch { expected: table.tasks.len(), found: row.len() });
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("metric table"));
        }
    }
    let mut totals = vec![0.0; n];
    for (task, &higher) in table.higher_is_better.iter().enumerate() {
        let key = |i: usize| {
            let v = table.values[i][task];
            if higher { -v } else { v }
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && key(order[end]) == key(order[start]) {
                end += 1;
            }
            // positions start+1..=end share their mean
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                totals[i] += rank;
            }
            start = end;
        }
    }
    let k = table.tasks.len() as f64;
    Ok(totals.into_iter().map(|t| t / k).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub reached: bool,
    /// Index into the problem's known optima of the one nearest the end point.
    pub which_optimum: Option<usize>,
    pub final_distance: f64,
    pub final_combined_loss: f64,
    pub steps_used: u64,
    /// First step from which every later row satisfies the success criterion.
    pub converged_at: Option<u64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub distance: f64,
    pub loss: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { distance: 0.1, loss: 1e-3 }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn nearest(theta: &[f64], optima: &[KnownOptimum]) -> Option<(usize, f64)> {
    optima
        .iter()
        .enumerate()
        .map(|(i, o)| (i, distance(theta, o.location.as_slice())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Success means the last θ is within `tol.distance` of a known optimum, or
/// the last combined loss is within `tol.loss` of the best optimum value.
pub fn classify_convergence(
    trajectory: &[TrajectoryRecord],
    optima: &[KnownOptimum],
    tol: Tolerances,
    diverged: bool,
) -> Result<ConvergenceVerdict> {
    let last = trajectory.last().ok_or_else(|| Error::config("empty trajectory"))?;
    let global = optima.iter().map(|o| o.loss).min_by(|a, b| a.total_cmp(b));
    let hit = |r: &TrajectoryRecord| {
        let near = nearest(&r.theta, optima).is_some_and(|(_, d)| d <= tol.distance);
        let low = global.is_some_and(|g| (r.loss_mtl - g).abs() <= tol.loss);
        near || low
    };
    let (which, final_distance) = match nearest(&last.theta, optima) {
        Some((i, d)) => (Some(i), d),
        None => (None, f64::INFINITY),
    };
    let reached = !diverged && hit(last);
    let converged_at = if reached {
        let settled = trajectory.iter().rev().take_while(|r| hit(r)).count();
        Some(trajectory[trajectory.len() - settled].t)
    } else {
        None
    };
    Ok(ConvergenceVerdict {
        reached,
        which_optimum: which,
        final_distance,
        final_combined_loss: last.loss_mtl,
        steps_used: last.t,
        converged_at,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::ParamVector;
    use approx::assert_relative_eq;

    #[test]
    fn delta_m_examples() {
        let m = [TaskMetric::higher(70.0), TaskMetric::lower(0.5)];
        assert_eq!(delta_m_percent(&m, &m).unwrap(), 0.0);
        assert_relative_eq!(
            delta_m_percent(&[TaskMetric::higher(110.0)], &[TaskMetric::higher(100.0)]).unwrap(),
            -10.0,
            max_relative = 1e-12
        );
        assert!(matches!(
            delta_m_percent(&[TaskMetric::lower(1.0)], &[TaskMetric::lower(0.0)]),
            Err(Error::ZeroBaseline { task: 1 })
        ));
    }

    #[test]
    fn delta_m_flips_with_direction() {
        let up = delta_m_percent(&[TaskMetric::higher(3.0)], &[TaskMetric::higher(2.0)]).unwrap();
        let down = delta_m_percent(&[TaskMetric::lower(3.0)], &[TaskMetric::lower(2.0)]).unwrap();
        assert_eq!(up, -down);
    }

    #[test]
    fn delta_m_is_scale_free_per_task() {
        let mtl = [TaskMetric::higher(72.0), TaskMetric::lower(0.014)];
        let stl = [TaskMetric::higher(74.01), TaskMetric::lower(0.0125)];
        let scaled_mtl = [mtl[0], TaskMetric::lower(0.014 * 1000.0)];
        let scaled_stl = [stl[0], TaskMetric::lower(0.0125 * 1000.0)];
        assert_relative_eq!(
            delta_m_percent(&mtl, &stl).unwrap(),
            delta_m_percent(&scaled_mtl, &scaled_stl).unwrap(),
            max_relative = 1e-12
        );
    }

    fn table(rows: &[(&str, &[f64])], higher: &[bool]) -> MetricTable {
        MetricTable {
            methods: rows.iter().map(|r| r.0.to_string()).collect(),
            tasks: (0..higher.len()).map(|i| format!("t{i}")).collect(),
            higher_is_better: higher.to_vec(),
            values: rows.iter().map(|r| r.1.to_vec()).collect(),
        }
    }

    #[test]
    fn mean_rank_examples() {
        let t = table(&[("A", &[2.0, 2.0]), ("B", &[1.0, 1.0])], &[true, true]);
        assert_eq!(mean_rank(&t).unwrap(), vec![1.0, 2.0]);
        let t = table(&[("A", &[2.0, 1.0]), ("B", &[1.0, 2.0])], &[true, true]);
        assert_eq!(mean_rank(&t).unwrap(), vec![1.5, 1.5]);
        let t = table(&[("A", &[1.0]), ("B", &[1.0]), ("C", &[0.5])], &[false]);
        assert_eq!(mean_rank(&t).unwrap(), vec![2.5, 2.5, 1.0]);
        let single = table(&[("A", &[1.0])], &[true]);
        assert!(mean_rank(&single).is_err());
    }

    #[test]
    fn parse_table() {
        let text = "method,a,b\n# comment\ndirection,higher,lower\nSTL,1.0,2.0\nX,1.5,1.0\n";
        let t = MetricTable::from_csv(text.as_bytes()).unwrap();
        assert_eq!(t.methods, vec!["STL", "X"]);
        assert_eq!(t.higher_is_better, vec![true, false]);
        assert_eq!(t.values[1], vec![1.5, 1.0]);
        assert_eq!(t.without(&["STL"]).methods, vec!["X"]);
        assert!(MetricTable::from_csv("method,a\nSTL,1\n".as_bytes()).is_err());
    }

    fn row(t: u64, theta: [f64; 2], loss: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            theta: theta.to_vec(),
            losses: vec![loss / 2.0, loss / 2.0],
            loss_mtl: loss,
            psi: None,
            branch: None,
            gnorms: None,
        }
    }

    fn optima() -> Vec<KnownOptimum> {
        [[-1.0, 0.0], [1.0, 0.0]]
            .iter()
            .map(|p| KnownOptimum { location: ParamVector::new(p.to_vec()).unwrap(), loss: -5.0 })
            .collect()
    }

    #[test]
    fn classify_examples() {
        let tol = Tolerances::default();
        let exact = classify_convergence(&[row(0, [1.0, 0.0], -5.0)], &optima(), tol, false).unwrap();
        assert!(exact.reached);
        assert_eq!(exact.final_distance, 0.0);
        assert_eq!(exact.which_optimum, Some(1));

        let far = classify_convergence(&[row(0, [9.0, 9.0], 40.0)], &optima(), tol, false).unwrap();
        assert!(!far.reached);
        assert_eq!(far.converged_at, None);

        let path = [row(0, [5.0, 5.0], 3.0), row(1, [-0.99, 0.0], -4.9), row(2, [-1.0, 0.0], -5.0)];
        let v = classify_convergence(&path, &optima(), tol, false).unwrap();
        assert!(v.reached);
        assert_eq!((v.which_optimum, v.converged_at, v.steps_used), (Some(0), Some(1), 2));

        let diverged = classify_convergence(&path, &optima(), tol, true).unwrap();
        assert!(!diverged.reached);
    }
}
