//! Multi-task gradient aggregation.
//!
//! The centrepiece is [`surgery::SamGsState`], a similarity-aware momentum
//! method that watches how far apart the task-gradient magnitudes are and
//! switches between equalising them and per-coordinate momentum weighting.
//! Around it sit the baseline aggregators, two synthetic two-task problems
//! with analytic gradients, a finite-difference checker, benchmark metrics,
//! and a runner that logs full trajectories.

pub mod baselines;
pub mod error;
pub mod fd;
pub mod metrics;
pub mod par;
pub mod problems;
pub mod runner;
pub mod similarity;
pub mod surgery;
pub mod trajectory;
pub mod vector;

pub use error::{Error, Result};
pub use par::Execution;
pub use problems::{problem_by_name, KnownOptimum, Objective, ProblemSpec};
pub use runner::{Method, RunConfig};
pub use similarity::{aggregate_similarity, magnitude_similarity, SimilarityAggregation};
pub use surgery::{Branch, SamGsConfig, SamGsState, StepOutcome};
pub use vector::{GradientSet, ParamVector};
