//! Poisson surrogate likelihood on binned counts, smoothness penalties and the
//! mapping from the unconstrained log-intensity back to a normalized density.
//!
//! With `w_i = exp(θ_i)` the intensities are `λ_j = Σ_i G_ij w_i` and the
//! surrogate negative log-likelihood is `l(θ) = Σ_j (λ_j − x_j log λ_j)`.
//! A minimizer of `l(θ) + (τ/2)‖Δ^(k+1) θ‖_q^q`, shifted by `−log(nΔ)`, is the
//! log of the estimated mixing density.

use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::grid::{Grid, KernelMatrix};
use crate::operators::DiffOperator;

/// Largest `|θ_i|` accepted before `exp` is considered out of range.
pub const THETA_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Norm {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Norm::L1),
            "l2" | "2" => Ok(Norm::L2),
            other => Err(DeconvError::InvalidPenalty(format!("unknown norm {other:?}"))),
        }
    }
}

/// Penalty `(τ/2)‖Δ^(k+1) θ‖_q^q` with `k = order`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub order: usize,
    pub norm: Norm,
    pub tau: f64,
}

impl PenaltySpec {
    pub fn new(order: usize, norm: Norm, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(DeconvError::InvalidPenalty(format!("tau must be finite and >= 0, got {tau}")));
        }
        Ok(PenaltySpec { order, norm, tau })
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(self.order, self.norm, tau)
    }

    /// The operator `Δ^(k+1)` for a grid with `cols` points.
    pub fn operator(&self, cols: usize) -> Result<DiffOperator> {
        DiffOperator::new(cols, self.order + 1)
    }
}

/// The likelihood part of the objective for a fixed kernel and count vector.
#[derive(Debug, Clone)]
pub struct PoissonObjective<'a> {
    kernel: &'a KernelMatrix,
    counts: Vec<f64>,
}

impl<'a> PoissonObjective<'a> {
    pub fn new(grid: &Grid, kernel: &'a KernelMatrix) -> Result<Self> {
        Self::from_counts(grid.counts_f64(), kernel)
    }

    pub fn from_counts(counts: Vec<f64>, kernel: &'a KernelMatrix) -> Result<Self> {
        if counts.len() != kernel.dim() {
            return Err(DeconvError::DimensionMismatch {
                expected: kernel.dim(),
                got: counts.len(),
            });
        }
        Ok(PoissonObjective { kernel, counts })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn kernel(&self) -> &KernelMatrix {
        self.kernel
    }

    fn weights(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(DeconvError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        theta
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value.abs() <= THETA_LIMIT {
                    Ok(value.exp())
                } else {
                    Err(DeconvError::ThetaOutOfRange { index, value })
                }
            })
            .collect()
    }

    /// `λ_j = Σ_i G_ij exp(θ_i)`.
    pub fn intensity(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(theta)?;
        let mut lambda = vec![0.0; self.dim()];
        self.kernel.transpose_mul(&w, &mut lambda);
        Ok(lambda)
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let lambda = self.intensity(theta)?;
        self.value_from_intensity(&lambda)
    }

    fn value_from_intensity(&self, lambda: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (j, (&l, &x)) in lambda.iter().zip(&self.counts).enumerate() {
            if x > 0.0 {
                if !(l > 0.0) {
                    return Err(DeconvError::InvalidIntensity(j));
                }
                total += l - x * l.ln();
            } else {
                total += l;
            }
        }
        Ok(total)
    }

    /// Value and gradient `∂l/∂θ_j = e^{θ_j} Σ_i G_ji (1 − x_i/λ_i)`.
    pub fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let w = self.weights(theta)?;
        let mut lambda = vec![0.0; self.dim()];
        self.kernel.transpose_mul(&w, &mut lambda);
        let value = self.value_from_intensity(&lambda)?;
        let resid: Vec<f64> = lambda
            .iter()
            .zip(&self.counts)
            .map(|(&l, &x)| if x > 0.0 { 1.0 - x / l } else { 1.0 })
            .collect();
        self.kernel.mul(&resid, grad);
        for (g, wj) in grad.iter_mut().zip(&w) {
            *g *= wj;
        }
        Ok(value)
    }

    /// Like [`value_grad`](Self::value_grad) but returns the Poisson deviance
    /// form `Σ_j (λ_j − x_j − x_j log(λ_j / x_j))`, which differs from `l(θ)` by a
    /// constant and stays small near a good fit. Solvers use it for its
    /// better relative precision.
    pub fn deviance_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let w = self.weights(theta)?;
        let mut lambda = vec![0.0; self.dim()];
        self.kernel.transpose_mul(&w, &mut lambda);
        let mut total = 0.0;
        let mut resid = vec![0.0; self.dim()];
        for (j, (&l, &x)) in lambda.iter().zip(&self.counts).enumerate() {
            if x > 0.0 {
                if !(l > 0.0) {
                    return Err(DeconvError::InvalidIntensity(j));
                }
                total += (l - x) - x * (l / x).ln();
                resid[j] = 1.0 - x / l;
            } else {
                total += l;
                resid[j] = 1.0;
            }
        }
        self.kernel.mul(&resid, grad);
        for (g, wj) in grad.iter_mut().zip(&w) {
            *g *= wj;
        }
        Ok(total)
    }
}

impl PoissonObjective<'_> {
    /// Dense Hessian of `l` (row-major),
    /// `H_ij = δ_ij e^{θ_i} (G r)_i + e^{θ_i} e^{θ_j} Σ_m G_im G_jm x_m/λ_m²` with `r = 1 − x/λ`.
    pub fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (mut h, diag) = self.hessian_parts(theta)?;
        let d = self.dim();
        for (i, v) in diag.iter().enumerate() {
            h[i * d + i] += v;
        }
        Ok(h)
    }

    /// The Hessian split into its positive semidefinite Gauss-Newton part and
    /// the diagonal residual term `e^{θ_i} (G r)_i`, which may be negative.
    pub fn hessian_parts(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let w = self.weights(theta)?;
        let mut lambda = vec![0.0; d];
        self.kernel.transpose_mul(&w, &mut lambda);
        let mut resid = vec![0.0; d];
        let mut curv = vec![0.0; d];
        for (j, (&l, &x)) in lambda.iter().zip(&self.counts).enumerate() {
            if x > 0.0 {
                if !(l > 0.0) {
                    return Err(DeconvError::InvalidIntensity(j));
                }
                resid[j] = 1.0 - x / l;
                curv[j] = x / (l * l);
            } else {
                resid[j] = 1.0;
            }
        }
        let mut diag = vec![0.0; d];
        self.kernel.mul(&resid, &mut diag);
        diag.iter_mut().zip(&w).for_each(|(v, wi)| *v *= wi);
        let mut h = vec![0.0; d * d];
        let mut scaled = vec![0.0; d];
        for i in 0..d {
            scaled.iter_mut().zip(self.kernel.row(i)).zip(&curv).for_each(|((s, g), c)| *s = g * c);
            for j in i..d {
                let v = w[i] * w[j] * dot(&scaled, self.kernel.row(j));
                h[i * d + j] = v;
                h[j * d + i] = v;
            }
        }
        Ok((h, diag))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn lambda(theta: &[f64], kernel: &KernelMatrix) -> Result<Vec<f64>> {
    PoissonObjective::from_counts(vec![0.0; kernel.dim()], kernel)?.intensity(theta)
}

pub fn nll(theta: &[f64], grid: &Grid, kernel: &KernelMatrix) -> Result<f64> {
    PoissonObjective::new(grid, kernel)?.value(theta)
}

pub fn nll_grad(theta: &[f64], grid: &Grid, kernel: &KernelMatrix) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; theta.len()];
    PoissonObjective::new(grid, kernel)?.value_grad(theta, &mut grad)?;
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    /// `None` for the nonsmooth l1 penalty.
    pub grad: Option<Vec<f64>>,
}

/// `(τ/2)‖Δθ‖_q^q` and, for `q = 2`, its gradient `τ ΔᵀΔθ`.
pub fn penalty_value_grad(theta: &[f64], spec: &PenaltySpec, op: &DiffOperator) -> Result<PenaltyEval> {
    let d = op.apply(theta)?;
    match spec.norm {
        Norm::L1 => Ok(PenaltyEval {
            value: 0.5 * spec.tau * d.iter().map(|v| v.abs()).sum::<f64>(),
            grad: None,
        }),
        Norm::L2 => {
            let value = 0.5 * spec.tau * d.iter().map(|v| v * v).sum::<f64>();
            let mut grad = op.apply_transpose(&d)?;
            grad.iter_mut().for_each(|g| *g *= spec.tau);
            Ok(PenaltyEval {
                value,
                grad: Some(grad),
            })
        }
    }
}

/// `‖Δθ‖_q` for the given norm.
pub fn penalty_norm(theta: &[f64], norm: Norm, op: &DiffOperator) -> Result<f64> {
    let d = op.apply(theta)?;
    Ok(match norm {
        Norm::L1 => d.iter().map(|v| v.abs()).sum(),
        Norm::L2 => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

/// Solver bookkeeping attached to every estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    /// BFGS iterations (l2) or ADMM iterations (l1).
    pub iterations: usize,
    /// Total BFGS iterations spent in ADMM theta-steps.
    pub inner_iterations: usize,
    /// Infinity norm of the smooth objective gradient at the returned point.
    pub grad_inf: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub nll: f64,
    pub penalty: f64,
    pub objective: f64,
    /// `Σ Δ exp(θ − log(nΔ))` before renormalization.
    pub raw_mass: f64,
    pub message: Option<String>,
}

/// A fitted log-intensity together with the implied density and marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: Vec<f64>,
    /// Normalized mixing density at the grid midpoints.
    pub f_hat: Vec<f64>,
    /// Fitted marginal density at the grid midpoints.
    pub m_hat: Vec<f64>,
    pub penalty: PenaltySpec,
    pub diagnostics: Diagnostics,
}

impl ThetaEstimate {
    pub fn tau(&self) -> f64 {
        self.penalty.tau
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    /// `log f̂` on the grid, finite even where `f̂` underflows.
    pub fn log_density(&self, grid: &Grid) -> Vec<f64> {
        let shift = grid.log_scale() + self.diagnostics.raw_mass.ln();
        self.theta.iter().map(|t| t - shift).collect()
    }
}

/// Maps `θ̂` to `f̂ = exp(θ̂ − log(nΔ))`, renormalized so that `Σ Δ f̂ = 1`,
/// and the marginal `m̂_j = Σ_i G_ij f̂_i`.
///
/// The mass before renormalization is stored in `diagnostics.raw_mass`.
pub fn shift_to_density(
    theta: Vec<f64>,
    grid: &Grid,
    kernel: &KernelMatrix,
    penalty: PenaltySpec,
    mut diagnostics: Diagnostics,
) -> ThetaEstimate {
    let width = grid.width();
    let shift = grid.log_scale();
    let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_scaled: f64 = theta.iter().map(|t| (t - top).exp()).sum();
    // log of Σ Δ exp(θ − log(nΔ))
    let log_mass = top + sum_scaled.ln() + width.ln() - shift;
    let f_hat: Vec<f64> = theta.iter().map(|t| (t - shift - log_mass).exp()).collect();
    let mut m_hat = vec![0.0; f_hat.len()];
    kernel.transpose_mul(&f_hat, &mut m_hat);
    diagnostics.raw_mass = log_mass.exp();
    ThetaEstimate {
        theta,
        f_hat,
        m_hat,
        penalty,
        diagnostics,
    }
}
