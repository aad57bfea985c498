use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use samgs::fd::{check_gradients, GradientCheckConfig};
use samgs::metrics::{delta_m_percent, mean_rank, MetricTable};
use samgs::runner::{
    default_sweep_steps, run_gamma_ablation, run_suite, run_trajectory, run_weighting_sweep, Method, OuterOptimizer,
    RunConfig, DEFAULT_GAMMAS,
};
use samgs::trajectory::write_csv;
use samgs::{problem_by_name, Error, Execution, ParamVector, Result, SimilarityAggregation};

const EXIT_CONFIG: u8 = 1;
const EXIT_ALL_DIVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "samgs", version, about = "Multi-task gradient aggregation benchmarks on synthetic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trajectory and write its CSV log.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Index of the problem's initial point.
        #[arg(long, default_value_t = 0, conflicts_with = "theta")]
        point: usize,
        /// Explicit start point, e.g. `--theta=-3.5,5.5`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        /// Trajectory file; defaults to `<output-dir>/point_<i>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every initial point; writes per-point CSVs and summary.json.
    Suite {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat the suite for each similarity threshold γ.
    AblateGamma {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Repeat the suite for each task weighting L = α·L1 + L2.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Step budget per trajectory (30000 for two_optima, else --max-steps).
        #[arg(long)]
        sweep_steps: Option<u64>,
    },
    /// Benchmark metrics over a typed-in results table.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Compare analytic gradients with central finite differences.
    CheckGradients {
        #[arg(long, default_value = "two_optima")]
        problem: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Sample the weighted loss on a rectangular grid (CSV) for contour plots.
    GridExport {
        #[arg(long, default_value = "two_optima")]
        problem: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
        xmin: f64,
        #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
        xmax: f64,
        #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
        ymin: f64,
        #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
        ymax: f64,
        #[arg(long, default_value_t = 0.1)]
        resolution: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Δm% of each method against a baseline row.
    DeltaM {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "STL")]
        baseline: String,
        /// Methods to report; all non-baseline rows when absent.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Mean rank of each method across the table's tasks.
    MeanRank {
        #[arg(long)]
        table: PathBuf,
        /// Rows left out of the ranking.
        #[arg(long, value_delimiter = ',', default_value = "STL")]
        exclude: Vec<String>,
    },
}

/// Flags mirroring [`RunConfig`]; anything given here overrides the config file.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// mean_all_pairs | min_off_diagonal
    #[arg(long)]
    similarity_mode: Option<String>,
    #[arg(long)]
    task_weight_alpha: Option<f64>,
    /// Comma-separated initial-point indices.
    #[arg(long, value_delimiter = ',')]
    points: Option<Vec<usize>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// plain | adam
    #[arg(long)]
    outer_optimizer: Option<String>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    tol_distance: Option<f64>,
    #[arg(long)]
    tol_loss: Option<f64>,
    #[arg(long)]
    pcgrad_shuffle: bool,
    #[arg(long)]
    cagrad_c: Option<f64>,
    /// Run initial points one after another on this thread.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(problem, max_steps, learning_rate, beta1, beta2, gamma, epsilon, task_weight_alpha, output_dir, seed, tol_distance, tol_loss, cagrad_c);
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(s) = &self.similarity_mode {
            cfg.similarity_mode = s.parse::<SimilarityAggregation>()?;
        }
        if let Some(o) = &self.outer_optimizer {
            cfg.outer_optimizer = Some(o.parse::<OuterOptimizer>()?);
        }
        if let Some(p) = &self.points {
            cfg.initial_points = Some(p.clone());
        }
        cfg.early_stop |= self.early_stop;
        cfg.pcgrad_shuffle |= self.pcgrad_shuffle;
        cfg.validate()?;
        Ok(cfg)
    }

    fn execution(&self) -> Execution {
        if self.sequential { Execution::Sequential } else { Execution::Parallel }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct NamedValue {
    method: String,
    value: f64,
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { run, point, theta, out } => {
            let cfg = run.resolve()?;
            let (spec, _) = cfg.resolve_problem()?;
            let (start, index) = match theta {
                Some(t) => (ParamVector::new(t)?, None),
                None => {
                    let p = spec.initial_points.get(point).ok_or_else(|| {
                        Error::InvalidConfig(format!("point {point} out of range; `{}` has {}", spec.name, spec.initial_points.len()))
                    })?;
                    (p.clone(), Some(point))
                }
            };
            if start.dimension() != spec.dimension() {
                return Err(Error::InvalidConfig(format!("start point must have {} coordinates", spec.dimension())));
            }
            let result = run_trajectory(&cfg, &spec, &start, index.unwrap_or(0) as u64)?;
            let path = match out {
                Some(p) => p,
                None => {
                    fs::create_dir_all(&cfg.output_dir)?;
                    let name = index.map_or_else(|| "trajectory.csv".to_string(), |i| format!("point_{i}.csv"));
                    cfg.output_dir.join(name)
                }
            };
            write_csv(fs::File::create(&path)?, &result.records)?;
            print_json(&result.verdict)?;
            Ok(if result.verdict.diverged { ExitCode::from(EXIT_ALL_DIVERGED) } else { ExitCode::SUCCESS })
        }
        Command::Suite { run } => {
            let cfg = run.resolve()?;
            let summary = run_suite(&cfg, run.execution())?;
            eprintln!(
                "{} / {} points reached an optimum ({} diverged); summary in {}",
                summary.success_count,
                summary.point_count,
                summary.divergent_count,
                cfg.output_dir.join("summary.json").display()
            );
            Ok(if summary.all_diverged() { ExitCode::from(EXIT_ALL_DIVERGED) } else { ExitCode::SUCCESS })
        }
        Command::AblateGamma { run, gammas } => {
            let cfg = run.resolve()?;
            let gammas = gammas.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
            let report = run_gamma_ablation(&cfg, &gammas, run.execution())?;
            for row in &report.rows {
                println!(
                    "gamma={:<4} success={}/{} diverged={} mean_final_loss={:.6} mean_steps={}",
                    row.value,
                    row.success_count,
                    row.point_count,
                    row.divergent_count,
                    row.mean_final_loss,
                    row.mean_steps_to_converge.map_or("-".to_string(), |s| format!("{s:.1}"))
                );
            }
            let all_diverged = report.rows.iter().all(|r| r.divergent_count == r.point_count);
            Ok(if all_diverged { ExitCode::from(EXIT_ALL_DIVERGED) } else { ExitCode::SUCCESS })
        }
        Command::SweepAlpha { run, alphas, sweep_steps } => {
            let cfg = run.resolve()?;
            let steps = sweep_steps.unwrap_or_else(|| default_sweep_steps(&cfg));
            let report = run_weighting_sweep(&cfg, &alphas, steps, run.execution())?;
            for row in &report.rows {
                println!(
                    "alpha={:<6} success={}/{} diverged={} mean_final_loss={:.6}",
                    row.value, row.success_count, row.point_count, row.divergent_count, row.mean_final_loss
                );
            }
            let all_diverged = report.rows.iter().all(|r| r.divergent_count == r.point_count);
            Ok(if all_diverged { ExitCode::from(EXIT_ALL_DIVERGED) } else { ExitCode::SUCCESS })
        }
        Command::Metrics(MetricsCommand::DeltaM { table, baseline, methods }) => {
            let table = MetricTable::from_csv(fs::File::open(&table)?)?;
            let stl = table.row(table.method_index(&baseline)?);
            let names = methods.unwrap_or_else(|| {
                table.methods.iter().filter(|m| **m != baseline).cloned().collect()
            });
            let mut out = Vec::with_capacity(names.len());
            for name in names {
                let value = delta_m_percent(&table.row(table.method_index(&name)?), &stl)?;
                out.push(NamedValue { method: name, value });
            }
            print_json(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics(MetricsCommand::MeanRank { table, exclude }) => {
            let table = MetricTable::from_csv(fs::File::open(&table)?)?;
            let excluded: Vec<&str> = exclude.iter().map(String::as_str).collect();
            let ranked = table.without(&excluded);
            let ranks = mean_rank(&ranked)?;
            let out: Vec<NamedValue> = ranked
                .methods
                .into_iter()
                .zip(ranks)
                .map(|(method, value)| NamedValue { method, value })
                .collect();
            print_json(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckGradients { problem, samples, seed, tolerance, step } => {
            let spec = problem_by_name(&problem)?;
            let mut cfg = GradientCheckConfig { samples, seed, tolerance, ..GradientCheckConfig::default() };
            cfg.fd.step = step;
            let report = check_gradients(spec.objective.as_ref(), &cfg)?;
            print_json(&report)?;
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
        }
        Command::GridExport { problem, alpha, xmin, xmax, ymin, ymax, resolution, out } => {
            let spec = problem_by_name(&problem)?.with_alpha(alpha)?;
            if !(resolution > 0.0 && xmax > xmin && ymax > ymin) {
                return Err(Error::InvalidConfig("grid needs resolution > 0, xmax > xmin, ymax > ymin".into()));
            }
            let nx = ((xmax - xmin) / resolution).round() as usize + 1;
            let ny = ((ymax - ymin) / resolution).round() as usize + 1;
            let sink: Box<dyn Write> = match out {
                Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
                None => Box::new(io::BufWriter::new(io::stdout().lock())),
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["theta_1", "theta_2", "loss_1", "loss_2", "loss_mtl"])?;
            for j in 0..ny {
                let y = ymin + j as f64 * resolution;
                for i in 0..nx {
                    let x = xmin + i as f64 * resolution;
                    let l = spec.objective.losses(&[x, y])?;
                    let mtl = l[0] * spec.task_weights[0] + l[1] * spec.task_weights[1];
                    w.write_record([x, y, l[0], l[1], mtl].map(|v| format!("{v:?}")))?;
                }
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
