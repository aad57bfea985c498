//! Experiment orchestration: one configured method driven from every initial
//! point of a problem, with per-step logs, verdicts and parameter sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cagrad_aggregate, ls_aggregate, mgda_aggregate, pcgrad_aggregate, pcgrad_order, AdamState, PcGradOrder,
};
use crate::error::{Error, Result};
use crate::metrics::{classify_convergence, ConvergenceVerdict, Tolerances};
use crate::par::{self, Execution};
use crate::problems::{problem_by_name, KnownOptimum, ProblemSpec};
use crate::similarity::SimilarityAggregation;
use crate::surgery::{Branch, SamGsConfig, SamGsState};
use crate::trajectory::{write_csv, TrajectoryRecord};
use crate::vector::{l2_norm, GradientSet, ParamVector};

/// Gamma values of the standard ablation.
pub const DEFAULT_GAMMAS: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

/// Budget used by weighting sweeps on the two-optima problem.
pub const TWO_OPTIMA_SWEEP_STEPS: u64 = 30_000;

const EARLY_STOP_NORM: f64 = 1e-12;
const EARLY_STOP_PATIENCE: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Samgs,
    LsAdam,
    Pcgrad,
    Mgda,
    Cagrad,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Samgs, Method::LsAdam, Method::Pcgrad, Method::Mgda, Method::Cagrad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Samgs => "samgs",
            Method::LsAdam => "ls_adam",
            Method::Pcgrad => "pcgrad",
            Method::Mgda => "mgda",
            Method::Cagrad => "cagrad",
        }
    }

    /// Linear sum is paired with Adam; the surgery methods take plain steps.
    pub fn default_outer(self) -> OuterOptimizer {
        match self {
            Method::LsAdam => OuterOptimizer::Adam,
            _ => OuterOptimizer::Plain,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// How an aggregated direction becomes a parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    /// `θ ← θ − lr · d`
    Plain,
    /// `θ ← θ − Adam(d)`
    Adam,
}

impl FromStr for OuterOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "sgd" => Ok(Self::Plain),
            "adam" => Ok(Self::Adam),
            other => Err(Error::config(format!("unknown outer optimizer `{other}`"))),
        }
    }
}

/// Experiment configuration. Loaded from TOML; every field is optional there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub method: Method,
    pub max_steps: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub similarity_mode: SimilarityAggregation,
    /// `L_mtl = α L₁ + L₂`
    pub task_weight_alpha: f64,
    /// Indices into the problem's initial points; all when absent.
    pub initial_points: Option<Vec<usize>>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Overrides the method's default pairing.
    pub outer_optimizer: Option<OuterOptimizer>,
    pub early_stop: bool,
    pub tol_distance: f64,
    pub tol_loss: f64,
    pub pcgrad_shuffle: bool,
    pub cagrad_c: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let samgs = SamGsConfig::default();
        Self {
            problem: "two_optima".into(),
            method: Method::Samgs,
            max_steps: 20_000,
            learning_rate: 1e-3,
            beta1: samgs.beta1,
            beta2: samgs.beta2,
            gamma: samgs.gamma,
            epsilon: samgs.epsilon,
            similarity_mode: samgs.similarity_mode,
            task_weight_alpha: 1.0,
            initial_points: None,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            outer_optimizer: None,
            early_stop: false,
            tol_distance: Tolerances::default().distance,
            tol_loss: Tolerances::default().loss,
            pcgrad_shuffle: false,
            cagrad_c: 0.4,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn samgs(&self) -> SamGsConfig {
        SamGsConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            gamma: self.gamma,
            epsilon: self.epsilon,
            alpha: self.learning_rate,
            similarity_mode: self.similarity_mode,
        }
    }

    pub fn outer(&self) -> OuterOptimizer {
        self.outer_optimizer.unwrap_or(self.method.default_outer())
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances { distance: self.tol_distance, loss: self.tol_loss }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.task_weight_alpha > 0.0 && self.task_weight_alpha.is_finite()) {
            return Err(Error::config(format!(
                "task_weight_alpha must be positive, got {}",
                self.task_weight_alpha
            )));
        }
        if !(self.tol_distance >= 0.0 && self.tol_loss >= 0.0) {
            return Err(Error::config("tolerances must be nonnegative"));
        }
        if !(self.cagrad_c >= 0.0 && self.cagrad_c.is_finite()) {
            return Err(Error::config(format!("cagrad_c must be nonnegative, got {}", self.cagrad_c)));
        }
        self.samgs().validate()
    }

    /// The configured problem, re-weighted and restricted to the selected points.
    pub fn resolve_problem(&self) -> Result<(ProblemSpec, Vec<usize>)> {
        let base = problem_by_name(&self.problem)?;
        let spec = if self.task_weight_alpha == 1.0 { base } else { base.with_alpha(self.task_weight_alpha)? };
        let n = spec.initial_points.len();
        let indices = match &self.initial_points {
            None => (0..n).collect(),
            Some(sel) => {
                if sel.is_empty() {
                    return Err(Error::config("initial point selection is empty"));
                }
                if let Some(bad) = sel.iter().find(|&&i| i >= n) {
                    return Err(Error::config(format!(
                        "initial point index {bad} out of range; `{}` has {n} points",
                        spec.name
                    )));
                }
                sel.clone()
            }
        };
        Ok((spec, indices))
    }
}

/// One aggregated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub direction: Vec<f64>,
    pub psi: Option<f64>,
    pub branch: Option<Branch>,
}

/// Turns the per-task gradients of one step into a single direction.
pub trait Aggregator: Send {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate>;
}

struct SamGs {
    state: SamGsState,
    config: SamGsConfig,
}

impl Aggregator for SamGs {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate> {
        let out = self.state.step(grads, &self.config)?;
        Ok(Aggregate { direction: out.update_direction, psi: Some(out.psi), branch: Some(out.branch) })
    }
}

fn plain(direction: Vec<f64>) -> Aggregate {
    Aggregate { direction, psi: None, branch: None }
}

// Gradients arrive already task-weighted, so the sum uses unit weights.
struct LinearSum;

impl Aggregator for LinearSum {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate> {
        ls_aggregate(grads, &vec![1.0; grads.task_count()]).map(plain)
    }
}

struct PcGrad {
    order: PcGradOrder,
    rng: ChaCha8Rng,
}

impl Aggregator for PcGrad {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate> {
        let order = pcgrad_order(grads.task_count(), self.order, &mut self.rng);
        pcgrad_aggregate(grads, &order).map(plain)
    }
}

struct Mgda;

impl Aggregator for Mgda {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate> {
        mgda_aggregate(grads).map(plain)
    }
}

struct CaGrad {
    c: f64,
}

impl Aggregator for CaGrad {
    fn aggregate(&mut self, grads: &GradientSet) -> Result<Aggregate> {
        cagrad_aggregate(grads, self.c).map(plain)
    }
}

/// Fresh aggregator for one trajectory. `stream` separates the random
/// streams of different initial points under one seed.
pub fn build_aggregator(cfg: &RunConfig, task_count: usize, dimension: usize, stream: u64) -> Result<Box<dyn Aggregator>> {
    Ok(match cfg.method {
        Method::Samgs => Box::new(SamGs { state: SamGsState::new(task_count, dimension)?, config: cfg.samgs() }),
        Method::LsAdam => Box::new(LinearSum),
        Method::Pcgrad => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream);
            let order = if cfg.pcgrad_shuffle { PcGradOrder::Shuffled } else { PcGradOrder::Ascending };
            Box::new(PcGrad { order, rng })
        }
        Method::Mgda => Box::new(Mgda),
        Method::Cagrad => Box::new(CaGrad { c: cfg.cagrad_c }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    pub records: Vec<TrajectoryRecord>,
    pub verdict: ConvergenceVerdict,
}

fn record(spec: &ProblemSpec, t: u64, theta: &ParamVector) -> Result<TrajectoryRecord> {
    let losses = spec.objective.losses(theta.as_slice())?;
    let loss_mtl = losses.iter().zip(&spec.task_weights).map(|(l, w)| l * w).sum::<f64>();
    if !(loss_mtl.is_finite() && losses.iter().all(|l| l.is_finite())) {
        return Err(Error::non_finite("loss"));
    }
    Ok(TrajectoryRecord {
        t,
        theta: theta.as_slice().to_vec(),
        losses,
        loss_mtl,
        psi: None,
        branch: None,
        gnorms: None,
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Runs one trajectory. Non-finite values end the run early and mark the
/// verdict as diverged; the rows logged so far are kept.
pub fn run_trajectory(cfg: &RunConfig, spec: &ProblemSpec, theta0: &ParamVector, stream: u64) -> Result<TrajectoryRun> {
    cfg.validate()?;
    let mut aggregator = build_aggregator(cfg, spec.task_count(), spec.dimension(), stream)?;
    let mut adam = match cfg.outer() {
        OuterOptimizer::Adam => Some(AdamState::new(spec.dimension(), cfg.learning_rate)),
        OuterOptimizer::Plain => None,
    };
    let mut theta = theta0.clone();
    let mut records = vec![record(spec, 0, &theta)?];
    let mut diverged = false;
    let mut quiet_steps = 0u32;

    for t in 1..=cfg.max_steps {
        let step = (|| -> Result<TrajectoryRecord> {
            let grads = spec.weighted_gradients(theta.as_slice())?;
            let agg = aggregator.aggregate(&grads)?;
            let delta = match adam.as_mut() {
                Some(a) => a.step(&agg.direction)?,
                None => agg.direction.iter().map(|d| cfg.learning_rate * d).collect(),
            };
            if l2_norm(&agg.direction) < EARLY_STOP_NORM {
                quiet_steps += 1;
            } else {
                quiet_steps = 0;
            }
            let mut next = theta.clone();
            next.descend(&delta)?;
            let mut row = record(spec, t, &next)?;
            row.psi = agg.psi;
            row.branch = agg.branch;
            row.gnorms = Some(grads.norms());
            theta = next;
            Ok(row)
        })();
        match step {
            Ok(row) => records.push(row),
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if cfg.early_stop && quiet_steps >= EARLY_STOP_PATIENCE {
            break;
        }
    }

    let verdict = classify_convergence(&records, &spec.known_optima, cfg.tolerances(), diverged)?;
    Ok(TrajectoryRun { records, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub initial_point: Vec<f64>,
    pub final_point: Vec<f64>,
    pub trajectory_file: Option<String>,
    pub verdict: ConvergenceVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub problem: String,
    pub method: Method,
    pub outer_optimizer: OuterOptimizer,
    pub task_weights: Vec<f64>,
    pub known_optima: Vec<KnownOptimum>,
    pub points: Vec<PointReport>,
    pub point_count: usize,
    pub success_count: usize,
    pub divergent_count: usize,
    /// Mean of `converged_at` over successful points.
    pub mean_steps_to_converge: Option<f64>,
    pub mean_final_loss: f64,
    pub config: RunConfig,
}

impl SummaryReport {
    pub fn all_diverged(&self) -> bool {
        self.point_count > 0 && self.divergent_count == self.point_count
    }
}

/// Runs every selected initial point without touching the filesystem.
pub fn run_points(cfg: &RunConfig, exec: Execution) -> Result<(ProblemSpec, Vec<(usize, TrajectoryRun)>)> {
    cfg.validate()?;
    let (spec, indices) = cfg.resolve_problem()?;
    spec.validate()?;
    let runs = par::map(exec, &indices, |&i| {
        run_trajectory(cfg, &spec, &spec.initial_points[i], i as u64).map(|r| (i, r))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((spec, runs))
}

fn summarise(cfg: &RunConfig, spec: &ProblemSpec, runs: &[(usize, TrajectoryRun)], files: Vec<Option<String>>) -> SummaryReport {
    let points: Vec<PointReport> = runs
        .iter()
        .zip(files)
        .map(|((i, run), file)| PointReport {
            index: *i,
            initial_point: spec.initial_points[*i].as_slice().to_vec(),
            final_point: run.records.last().map(|r| r.theta.clone()).unwrap_or_default(),
            trajectory_file: file,
            verdict: run.verdict.clone(),
        })
        .collect();
    let success: Vec<&PointReport> = points.iter().filter(|p| p.verdict.reached).collect();
    let mean_steps_to_converge = if success.is_empty() {
        None
    } else {
        let total: f64 = success.iter().filter_map(|p| p.verdict.converged_at).map(|s| s as f64).sum();
        Some(total / success.len() as f64)
    };
    let mean_final_loss =
        points.iter().map(|p| p.verdict.final_combined_loss).sum::<f64>() / points.len().max(1) as f64;
    SummaryReport {
        problem: spec.name.clone(),
        method: cfg.method,
        outer_optimizer: cfg.outer(),
        task_weights: spec.task_weights.clone(),
        known_optima: spec.known_optima.clone(),
        point_count: points.len(),
        success_count: success.len(),
        divergent_count: points.iter().filter(|p| p.verdict.diverged).count(),
        mean_steps_to_converge,
        mean_final_loss,
        points,
        config: cfg.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs every selected initial point, writing `point_<i>.csv` per point and
/// `summary.json` into `cfg.output_dir`.
pub fn run_suite(cfg: &RunConfig, exec: Execution) -> Result<SummaryReport> {
    let (spec, runs) = run_points(cfg, exec)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut files = Vec::with_capacity(runs.len());
    for (i, run) in &runs {
        let name = format!("point_{i}.csv");
        write_csv(fs::File::create(cfg.output_dir.join(&name))?, &run.records)?;
        files.push(Some(name));
    }
    let summary = summarise(cfg, &spec, &runs, files);
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Same as [`run_suite`] but keeps everything in memory.
pub fn run_suite_in_memory(cfg: &RunConfig, exec: Execution) -> Result<SummaryReport> {
    let (spec, runs) = run_points(cfg, exec)?;
    let files = vec![None; runs.len()];
    Ok(summarise(cfg, &spec, &runs, files))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// The swept value (γ or α).
    pub value: f64,
    pub success_count: usize,
    pub point_count: usize,
    pub divergent_count: usize,
    pub mean_final_loss: f64,
    pub mean_steps_to_converge: Option<f64>,
    pub output_dir: String,
}

impl SweepRow {
    fn from_summary(value: f64, s: &SummaryReport) -> Self {
        Self {
            value,
            success_count: s.success_count,
            point_count: s.point_count,
            divergent_count: s.divergent_count,
            mean_final_loss: s.mean_final_loss,
            mean_steps_to_converge: s.mean_steps_to_converge,
            output_dir: s.config.output_dir.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub problem: String,
    pub method: Method,
    pub rows: Vec<SweepRow>,
    /// Best success count among γ strictly inside (0, 1).
    pub best_interior_success: Option<usize>,
    /// Best success count among γ ∈ {0, 1}.
    pub best_extreme_success: Option<usize>,
}

impl AblationReport {
    /// Extremes do no better than the best interior γ.
    pub fn extremes_not_better(&self) -> Option<bool> {
        Some(self.best_extreme_success? <= self.best_interior_success?)
    }

    /// An extreme γ ties the best interior γ.
    pub fn extremes_tie(&self) -> Option<bool> {
        Some(self.best_extreme_success? == self.best_interior_success?)
    }
}

fn sweep_label(v: f64) -> String {
    format!("{v}")
}

/// Runs the suite once per γ (method forced to SAM-GS) under
/// `base.output_dir/gamma_<γ>/` and writes `ablation.json`.
pub fn run_gamma_ablation(base: &RunConfig, gammas: &[f64], exec: Execution) -> Result<AblationReport> {
    if gammas.is_empty() {
        return Err(Error::config("gamma list is empty"));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::config(format!("gamma must lie in [0, 1], got {g}")));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let cfg = RunConfig {
            method: Method::Samgs,
            gamma,
            output_dir: base.output_dir.join(format!("gamma_{}", sweep_label(gamma))),
            ..base.clone()
        };
        let summary = run_suite(&cfg, exec)?;
        rows.push(SweepRow::from_summary(gamma, &summary));
    }
    let best = |pred: &dyn Fn(f64) -> bool| rows.iter().filter(|r| pred(r.value)).map(|r| r.success_count).max();
    let report = AblationReport {
        problem: base.problem.clone(),
        method: Method::Samgs,
        best_interior_success: best(&|g| g > 0.0 && g < 1.0),
        best_extreme_success: best(&|g| g == 0.0 || g == 1.0),
        rows,
    };
    fs::create_dir_all(&base.output_dir)?;
    write_json(&base.output_dir.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub problem: String,
    pub method: Method,
    pub max_steps: u64,
    pub rows: Vec<SweepRow>,
}

/// Step budget a weighting sweep uses when none is given.
pub fn default_sweep_steps(base: &RunConfig) -> u64 {
    if base.problem == "two_optima" { TWO_OPTIMA_SWEEP_STEPS } else { base.max_steps }
}

/// Runs the suite once per α with `L_mtl = α L₁ + L₂` under
/// `base.output_dir/alpha_<α>/` and writes `sweep.json`.
pub fn run_weighting_sweep(base: &RunConfig, alphas: &[f64], max_steps: u64, exec: Execution) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::config("alpha list is empty"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::config(format!("alpha must be positive, got {a}")));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = RunConfig {
            task_weight_alpha: alpha,
            max_steps,
            output_dir: base.output_dir.join(format!("alpha_{}", sweep_label(alpha))),
            ..base.clone()
        };
        let summary = run_suite(&cfg, exec)?;
        rows.push(SweepRow::from_summary(alpha, &summary));
    }
    let report = SweepReport { problem: base.problem.clone(), method: base.method, max_steps, rows };
    fs::create_dir_all(&base.output_dir)?;
    write_json(&base.output_dir.join("sweep.json"), &report)?;
    Ok(report)
}
