//! Posterior means of the latent locations under the fitted mixing density.
//!
//! With the prior supported on the grid midpoints with weights `Δ f̂_i`, the
//! posterior mean is the ratio
//! `E[μ | y] = Σ ξ_i φ(y − ξ_i) f̂_i / Σ φ(y − ξ_i) f̂_i`,
//! which is exactly Tweedie's `y + m̂'(y)/m̂(y)` for the implied marginal.
//! Everything is evaluated in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::grid::Grid;
use crate::objective::ThetaEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansEstimate {
    pub mu_hat: Vec<f64>,
    /// Observations where every weight underflowed and the nearest support
    /// point was used instead.
    pub fallbacks: usize,
}

pub fn posterior_means(estimate: &ThetaEstimate, grid: &Grid, y: &[f64]) -> Result<MeansEstimate> {
    posterior_means_from_log_density(&estimate.log_density(grid), grid, y)
}

/// Same as [`posterior_means`] from density values; zero entries drop out of the support.
pub fn posterior_means_from_density(f: &[f64], grid: &Grid, y: &[f64]) -> Result<MeansEstimate> {
    if f.iter().any(|v| !(*v >= 0.0)) {
        return Err(DeconvError::DensityNotNormalized(f64::NAN));
    }
    let mass = f.iter().sum::<f64>() * grid.width();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(DeconvError::DensityNotNormalized(mass));
    }
    let log_f: Vec<f64> = f.iter().map(|v| v.ln()).collect();
    posterior_means_from_log_density(&log_f, grid, y)
}

pub fn posterior_means_from_log_density(log_f: &[f64], grid: &Grid, y: &[f64]) -> Result<MeansEstimate> {
    if log_f.len() != grid.len() {
        return Err(DeconvError::DimensionMismatch {
            expected: grid.len(),
            got: log_f.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(DeconvError::InvalidTarget(i));
    }
    let xi = grid.midpoints();
    let results: Vec<(f64, bool)> = y.par_iter().map(|&obs| posterior_mean_one(log_f, xi, obs)).collect();
    let fallbacks = results.iter().filter(|(_, f)| *f).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} posterior means fell back to the nearest support point");
    }
    Ok(MeansEstimate {
        mu_hat: results.into_iter().map(|(m, _)| m).collect(),
        fallbacks,
    })
}

fn posterior_mean_one(log_f: &[f64], xi: &[f64], y: f64) -> (f64, bool) {
    let top = log_f
        .iter()
        .zip(xi)
        .map(|(lf, x)| lf - 0.5 * (y - x) * (y - x))
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        let nearest = xi
            .iter()
            .copied()
            .min_by(|a, b| (a - y).abs().total_cmp(&(b - y).abs()))
            .unwrap_or(y);
        return (nearest, true);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (lf, &x) in log_f.iter().zip(xi) {
        let w = (lf - 0.5 * (y - x) * (y - x) - top).exp();
        num += w * x;
        den += w;
    }
    (num / den, false)
}

/// `100 · mean((μ̂ − μ)²)`.
pub fn means_mse(mu_hat: &[f64], mu_true: &[f64]) -> Result<f64> {
    if mu_hat.len() != mu_true.len() {
        return Err(DeconvError::LengthMismatch(mu_hat.len(), mu_true.len()));
    }
    if mu_hat.is_empty() {
        return Err(DeconvError::NoData);
    }
    let sum: f64 = mu_hat.iter().zip(mu_true).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(100.0 * sum / mu_hat.len() as f64)
}
