//! Empirical-Bayes deconvolution of Gaussian location mixtures by penalized
//! Poisson likelihood on histogram counts.
//!
//! The pipeline bins the observations ([`grid`]), fits a log-intensity with a
//! trend-filtering penalty ([`solvers`]), sweeps a warm-started regularization
//! path ([`path`]), picks a smoothing level ([`select`]) and turns the fitted
//! mixing density into posterior means ([`tweedie`]). [`simulate`] holds the
//! benchmark mixtures and the Monte Carlo harness.

pub mod bfgs;
pub mod error;
pub mod fused_prox;
pub mod grid;
pub mod objective;
pub mod operators;
pub mod path;
pub mod report;
pub mod select;
pub mod simulate;
pub mod solvers;
pub mod tweedie;

pub use error::{DeconvError, Result};
pub use fused_prox::fused_prox;
pub use grid::{marginal_on_points, Grid, Kernel, KernelMatrix};
pub use objective::{Diagnostics, Norm, PenaltySpec, ThetaEstimate};
pub use operators::DiffOperator;
pub use path::{compute_path, DeconvPath, PathEntry, TauGrid};
pub use select::{aic_select, heldout_select, SelectionMethod, SelectionReport};
pub use simulate::{benchmark_example, run_benchmark, BenchConfig, BenchResult, Method, MixtureSpec};
pub use solvers::{solve, solve_l1, solve_l2, AdmmState, SolverConfig};
pub use tweedie::{means_mse, posterior_means, MeansEstimate};
