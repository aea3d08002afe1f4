//! Warm-started regularization path over a geometric grid of `τ` values.
//!
//! The path runs from the largest `τ` (nearly constant log-density) down to
//! the smallest; each solve starts from the previous solution, carrying
//! `(θ, α, u)` for l1 and `θ` for l2. Entries that fail to converge stay on
//! the path with their diagnostics so that selection can skip them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::grid::{Grid, KernelMatrix};
use crate::operators::DiffOperator;
use crate::objective::{penalty_norm, shift_to_density, Diagnostics, Norm, PenaltySpec, ThetaEstimate};
use crate::solvers::{finish, initial_theta, solve_l1, solve_l2, AdmmState, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid {
            max: 1e7,
            min: 1e-3,
            count: 50,
        }
    }
}

impl TauGrid {
    pub fn new(max: f64, min: f64, count: usize) -> Result<Self> {
        let grid = TauGrid { max, min, count };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) {
            return Err(DeconvError::InvalidConfig(format!(
                "tau grid needs max > min > 0, got max {} min {}",
                self.max, self.min
            )));
        }
        if self.count < 2 {
            return Err(DeconvError::InvalidConfig("tau grid needs at least two points".into()));
        }
        Ok(())
    }

    /// Strictly decreasing, evenly spaced in `log τ`, endpoints included exactly.
    pub fn values(&self) -> Vec<f64> {
        let (hi, lo) = (self.max.ln(), self.min.ln());
        let last = self.count - 1;
        (0..self.count)
            .map(|i| match i {
                0 => self.max,
                i if i == last => self.min,
                i => (hi + (lo - hi) * i as f64 / last as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub tau: f64,
    pub estimate: ThetaEstimate,
    /// `‖Δ^(k+1) θ̂‖_q`.
    pub penalty_norm: f64,
    /// Final ADMM state (l1 only).
    #[serde(skip)]
    pub admm: Option<AdmmState>,
    #[serde(skip)]
    pub seconds: f64,
}

impl PathEntry {
    pub fn converged(&self) -> bool {
        self.estimate.converged()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvPath {
    pub order: usize,
    pub norm: Norm,
    pub entries: Vec<PathEntry>,
    pub grid: Grid,
}

impl DeconvPath {
    pub fn taus(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.tau).collect()
    }

    pub fn converged_count(&self) -> usize {
        self.entries.iter().filter(|e| e.converged()).count()
    }
}

/// Squared Hellinger distance between two grid densities, `½ Σ Δ (√p − √q)²`.
pub fn hellinger_sq(p: &[f64], q: &[f64], width: f64) -> f64 {
    0.5 * width
        * p.iter()
            .zip(q)
            .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2))
            .sum::<f64>()
}

/// Flagged estimate for a solve that produced no usable optimum.
fn flagged(theta: Vec<f64>, grid: &Grid, kernel: &KernelMatrix, spec: &PenaltySpec, message: String) -> Result<ThetaEstimate> {
    let diag = Diagnostics {
        converged: false,
        message: Some(message),
        ..Default::default()
    };
    let op = spec.operator(grid.len()).ok();
    match finish(theta.clone(), grid, kernel, spec, op.as_ref(), diag.clone()) {
        Ok(est) => Ok(est),
        Err(_) => Ok(shift_to_density(theta, grid, kernel, *spec, diag)),
    }
}

/// One l2 solve where a line-search failure is downgraded to a flagged estimate.
pub(crate) fn solve_l2_flagged(
    grid: &Grid,
    kernel: &KernelMatrix,
    spec: &PenaltySpec,
    init: &[f64],
    cfg: &SolverConfig,
) -> Result<ThetaEstimate> {
    match solve_l2(grid, kernel, spec, Some(init), cfg) {
        Ok(est) => Ok(est),
        Err(DeconvError::LineSearchFailed { iterations, best }) => flagged(
            best,
            grid,
            kernel,
            spec,
            format!("line search failed after {iterations} iterations"),
        ),
        Err(e @ (DeconvError::ThetaOutOfRange { .. } | DeconvError::InvalidIntensity(_))) => {
            flagged(init.to_vec(), grid, kernel, spec, e.to_string())
        }
        Err(e) => Err(e),
    }
}

/// Solves the path at the grid's `τ` values.
pub fn compute_path(
    grid: &Grid,
    kernel: &KernelMatrix,
    order: usize,
    norm: Norm,
    taus: &TauGrid,
    cfg: &SolverConfig,
) -> Result<DeconvPath> {
    taus.validate()?;
    compute_path_at(grid, kernel, order, norm, &taus.values(), cfg)
}

/// Solves the path at explicit `τ` values, which must be strictly decreasing.
pub fn compute_path_at(
    grid: &Grid,
    kernel: &KernelMatrix,
    order: usize,
    norm: Norm,
    taus: &[f64],
    cfg: &SolverConfig,
) -> Result<DeconvPath> {
    if taus.is_empty() || taus.windows(2).any(|w| !(w[1] < w[0])) || taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(DeconvError::InvalidConfig("tau values must be nonnegative and strictly decreasing".into()));
    }
    cfg.validate()?;
    grid.check_order(order)?;
    let op = DiffOperator::new(grid.len(), order + 1)?;
    let mut theta = initial_theta(grid);
    let mut admm: Option<AdmmState> = None;
    let mut entries = Vec::with_capacity(taus.len());

    for &tau in taus {
        let spec = PenaltySpec::new(order, norm, tau)?;
        let start = Instant::now();
        let (estimate, state) = match norm {
            Norm::L2 => (solve_l2_flagged(grid, kernel, &spec, &theta, cfg)?, None),
            Norm::L1 => match solve_l1(grid, kernel, &spec, Some(&theta), admm.clone(), cfg) {
                Ok(sol) => (sol.estimate, Some(sol.state)),
                Err(
                    e @ (DeconvError::AdmmDiverged
                    | DeconvError::ThetaOutOfRange { .. }
                    | DeconvError::InvalidIntensity(_)),
                ) => (flagged(theta.clone(), grid, kernel, &spec, e.to_string())?, None),
                Err(e) => return Err(e),
            },
        };
        let seconds = start.elapsed().as_secs_f64();
        log::debug!(
            "tau {tau:e}: converged {} iterations {} in {seconds:.3}s",
            estimate.converged(),
            estimate.diagnostics.iterations
        );
        // Warm starts only propagate from usable solves.
        if estimate.converged() || estimate.diagnostics.iterations > 0 {
            theta = estimate.theta.clone();
            if state.is_some() {
                admm = state.clone();
            }
        }
        entries.push(PathEntry {
            tau,
            penalty_norm: penalty_norm(&estimate.theta, norm, &op)?,
            estimate,
            admm: state,
            seconds,
        });
    }

    let path = DeconvPath {
        order,
        norm,
        entries,
        grid: grid.clone(),
    };
    if path.converged_count() == 0 {
        return Err(DeconvError::PathFailed);
    }
    Ok(path)
}
