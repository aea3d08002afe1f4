//! Choosing `τ` from a path.
//!
//! * l1 paths: surrogate AIC, `l(θ̂_τ) + k + 1 + #knots`, where knots are
//!   the nonzero entries of the `(k+1)`-th differences.
//! * l2 paths: fit on a 75% training split and score the held-out counts
//!   with the rescaled fit plus the l1 norm of its `(k+1)`-th differences.
//!
//! Ties go to the larger `τ`; entries that did not converge are skipped.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::grid::{Grid, KernelMatrix};
use crate::objective::{penalty_norm, Norm, PenaltySpec, PoissonObjective, ThetaEstimate};
use crate::operators::DiffOperator;
use crate::path::{compute_path, solve_l2_flagged, DeconvPath, PathEntry, TauGrid};
use crate::simulate::rng_from_seed;
use crate::solvers::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Aic,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub tau: f64,
    pub score: f64,
    pub converged: bool,
    /// Knot count (AIC only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: SelectionMethod,
    pub chosen_tau: f64,
    pub chosen_index: usize,
    pub scores: Vec<ScoreEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

/// Index of the smallest finite score among converged entries, first index
/// winning ties. Paths are ordered by decreasing `τ`, so ties favour larger `τ`.
fn argmin(scores: &[ScoreEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.converged || !s.score.is_finite() {
            continue;
        }
        if best.map_or(true, |b| s.score < scores[b].score) {
            best = Some(i);
        }
    }
    best
}

/// Values whose sparsity is counted for an entry.
///
/// For ADMM solutions this is `Δ^(1) α`, the split variable's differences,
/// which are exactly sparse; `θ̂` itself only satisfies `α = Δ^(k) θ̂` up to
/// the primal tolerance. Entries without an ADMM state use `Δ^(k+1) θ̂`.
pub fn knot_values(entry: &PathEntry, order: usize) -> Result<Vec<f64>> {
    match &entry.admm {
        Some(state) => DiffOperator::new(state.alpha.len(), 1)?.apply(&state.alpha),
        None => {
            DiffOperator::new(entry.estimate.theta.len(), order + 1)?.apply(&entry.estimate.theta)
        }
    }
}

/// Default knot threshold `1e-6 · max(1, ‖values‖∞)`.
pub fn default_zero_tol(values: &[f64]) -> f64 {
    1e-6 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub fn count_knots(values: &[f64], zero_tol: f64) -> usize {
    values.iter().filter(|v| v.abs() > zero_tol).count()
}

/// Surrogate-AIC selection on an l1 path.
pub fn aic_select(path: &DeconvPath, grid: &Grid, kernel: &KernelMatrix, zero_tol: Option<f64>) -> Result<SelectionReport> {
    if path.norm != Norm::L1 {
        return Err(DeconvError::AicRequiresL1);
    }
    let obj = PoissonObjective::new(grid, kernel)?;
    let k = path.order as f64;
    let scores = path
        .entries
        .iter()
        .map(|entry| {
            let values = knot_values(entry, path.order)?;
            let tol = zero_tol.unwrap_or_else(|| default_zero_tol(&values));
            let knots = count_knots(&values, tol);
            let score = obj.value(&entry.estimate.theta).map(|l| l + k + 1.0 + knots as f64).unwrap_or(f64::INFINITY);
            Ok(ScoreEntry {
                tau: entry.tau,
                score,
                converged: entry.converged(),
                knots: Some(knots),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen_index = argmin(&scores).ok_or(DeconvError::PathFailed)?;
    Ok(SelectionReport {
        method: SelectionMethod::Aic,
        chosen_tau: scores[chosen_index].tau,
        chosen_index,
        scores,
        split_seed: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutOptions {
    pub order: usize,
    pub taus: TauGrid,
    /// Fraction of samples used for training.
    pub split_frac: f64,
    pub seed: u64,
}

impl Default for HeldoutOptions {
    fn default() -> Self {
        HeldoutOptions {
            order: 1,
            taus: TauGrid::default(),
            split_frac: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeldoutFit {
    pub report: SelectionReport,
    /// The l2 path fitted on the training split.
    pub train_path: DeconvPath,
    /// Fit on all samples at the chosen `τ`, started from the training solution.
    pub refit: ThetaEstimate,
}

/// Splits sample indices into (train, held-out) with a seeded shuffle.
pub fn split_samples(samples: &[f64], split_frac: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(DeconvError::InvalidConfig(format!("split fraction {split_frac} must lie in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_train = (split_frac * samples.len() as f64).floor() as usize;
    if n_train == 0 || n_train == samples.len() {
        return Err(DeconvError::SplitTooSmall);
    }
    let train = idx[..n_train].iter().map(|&i| samples[i]).collect();
    let held = idx[n_train..].iter().map(|&i| samples[i]).collect();
    Ok((train, held))
}

/// Held-out score `l_held(θ̂ − log(n_train Δ) + log(n_held Δ)) + ‖Δ^(k+1) θ̂_held‖₁`.
pub fn heldout_score(theta: &[f64], train: &Grid, held: &Grid, kernel: &KernelMatrix, op: &DiffOperator) -> Result<f64> {
    let shift = held.log_scale() - train.log_scale();
    let shifted: Vec<f64> = theta.iter().map(|t| t + shift).collect();
    let nll = PoissonObjective::new(held, kernel)?.value(&shifted)?;
    Ok(nll + penalty_norm(&shifted, Norm::L1, op)?)
}

/// Scores an l2 training path against held-out counts.
pub fn heldout_report(path: &DeconvPath, held: &Grid, kernel: &KernelMatrix, seed: u64) -> Result<SelectionReport> {
    if path.norm != Norm::L2 {
        return Err(DeconvError::HeldoutRequiresL2);
    }
    if held.n() == 0 || path.grid.n() == 0 {
        return Err(DeconvError::SplitTooSmall);
    }
    let op = DiffOperator::new(held.len(), path.order + 1)?;
    let scores: Vec<ScoreEntry> = path
        .entries
        .iter()
        .map(|entry| ScoreEntry {
            tau: entry.tau,
            score: heldout_score(&entry.estimate.theta, &path.grid, held, kernel, &op).unwrap_or(f64::INFINITY),
            converged: entry.converged(),
            knots: None,
        })
        .collect();
    let chosen_index = argmin(&scores).ok_or(DeconvError::PathFailed)?;
    Ok(SelectionReport {
        method: SelectionMethod::Heldout,
        chosen_tau: scores[chosen_index].tau,
        chosen_index,
        scores,
        split_seed: Some(seed),
    })
}

/// Held-out selection for the l2 penalty.
///
/// `grid` must be built from all of `samples`, so that both splits share the
/// same bins and the log-scale shift between them is exact.
pub fn heldout_select(
    samples: &[f64],
    grid: &Grid,
    kernel: &KernelMatrix,
    opts: &HeldoutOptions,
    cfg: &SolverConfig,
) -> Result<HeldoutFit> {
    let (train, held) = split_samples(samples, opts.split_frac, opts.seed)?;
    let train_grid = grid.recount(&train)?;
    let held_grid = grid.recount(&held)?;
    let train_path = compute_path(&train_grid, kernel, opts.order, Norm::L2, &opts.taus, cfg)?;
    let report = heldout_report(&train_path, &held_grid, kernel, opts.seed)?;
    let chosen = &train_path.entries[report.chosen_index].estimate;
    let shift = grid.log_scale() - train_grid.log_scale();
    let init: Vec<f64> = chosen.theta.iter().map(|t| t + shift).collect();
    let spec = PenaltySpec::new(opts.order, Norm::L2, report.chosen_tau)?;
    let refit = solve_l2_flagged(grid, kernel, &spec, &init, cfg)?;
    Ok(HeldoutFit {
        report,
        train_path,
        refit,
    })
}
