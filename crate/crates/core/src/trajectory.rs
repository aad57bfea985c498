//! Per-step trajectory log and its CSV encoding.
//!
//! Columns: `t`, `theta_1..theta_m`, `loss_1..loss_K`, `loss_mtl`, `psi`,
//! `branch`, `gnorm_1..gnorm_K`. For the two-parameter, two-task problems
//! this is exactly
//! `t,theta_1,theta_2,loss_1,loss_2,loss_mtl,psi,branch,gnorm_1,gnorm_2`.
//! Quantities a method does not produce are written as empty fields. Row 0
//! is the initial point; row `t` holds `θ_t` after `t` updates together with
//! the `Ψ`, branch and gradient norms of the step that produced it.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::surgery::Branch;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: u64,
    pub theta: Vec<f64>,
    pub losses: Vec<f64>,
    pub loss_mtl: f64,
    pub psi: Option<f64>,
    pub branch: Option<Branch>,
    pub gnorms: Option<Vec<f64>>,
}

pub fn header(dimension: usize, task_count: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dimension).map(|i| format!("theta_{i}")));
    h.extend((1..=task_count).map(|k| format!("loss_{k}")));
    h.push("loss_mtl".into());
    h.push("psi".into());
    h.push("branch".into());
    h.extend((1..=task_count).map(|k| format!("gnorm_{k}")));
    h
}

// Shortest representation that parses back to the same f64.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_csv<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::config("empty trajectory"))?;
    let (m, k) = (first.theta.len(), first.losses.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(m, k))?;
    for r in records {
        if r.theta.len() != m || r.losses.len() != k {
            return Err(Error::DimensionMismatch { expected: m, found: r.theta.len() });
        }
        let mut row = Vec::with_capacity(2 * k + m + 4);
        row.push(r.t.to_string());
        row.extend(r.theta.iter().map(|x| num(*x)));
        row.extend(r.losses.iter().map(|x| num(*x)));
        row.push(num(r.loss_mtl));
        row.push(r.psi.map(num).unwrap_or_default());
        row.push(r.branch.map(|b| b.as_str().to_string()).unwrap_or_default());
        match &r.gnorms {
            Some(g) => row.extend(g.iter().map(|x| num(*x))),
            None => row.extend(std::iter::repeat_n(String::new(), k)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_csv`]; `dimension` and `task_count`
/// are inferred from the header.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let m = head.iter().filter(|h| h.starts_with("theta_")).count();
    let k = head.iter().filter(|h| h.starts_with("loss_") && *h != "loss_mtl").count();
    if head != header(m, k) {
        return Err(Error::Parse(format!("unexpected trajectory header: {}", head.join(","))));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() { Ok(None) } else { parse(s).map(Some) }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let t = f[0].parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?;
        let theta = f[1..=m].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let losses = f[m + 1..=m + k].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let loss_mtl = parse(f[m + k + 1])?;
        let psi = opt(f[m + k + 2])?;
        let branch = match f[m + k + 3] {
            "" => None,
            s => Some(s.parse::<Branch>()?),
        };
        let norms: Vec<Option<f64>> = f[m + k + 4..].iter().map(|s| opt(s)).collect::<Result<_>>()?;
        let gnorms = norms.into_iter().collect::<Option<Vec<f64>>>();
        out.push(TrajectoryRecord { t, theta, losses, loss_mtl, psi, branch, gnorms });
    }
    Ok(out)
}
