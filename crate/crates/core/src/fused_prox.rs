//! Exact proximal operator of the 1-D total-variation penalty,
//!
//! `argmin_α ½‖α − z‖² + λ Σ_i |α_i − α_{i+1}|`,
//!
//! computed by the linear-time dynamic program of Johnson (2013).
//!
//! The forward pass keeps the derivative of the partial objective as a
//! piecewise-linear function, stored as knots with slope/intercept increments
//! in a buffer that grows from the middle in both directions. Each step clips
//! that derivative at `±λ`, which yields the back-pointer interval
//! `[lower_k, upper_k]` for `α_k` given `α_{k+1}`. The backward pass clamps
//! into those intervals.

use crate::error::{DeconvError, Result};

/// Solves the fused-lasso proximal problem for target `z` and weight `lambda`.
pub fn fused_prox(z: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    fused_prox_into(z, lambda, &mut out)?;
    Ok(out)
}

pub fn fused_prox_into(z: &[f64], lambda: f64, out: &mut [f64]) -> Result<()> {
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(DeconvError::InvalidTarget(i));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(DeconvError::InvalidPenalty(format!("prox weight {lambda} must be >= 0")));
    }
    if out.len() != z.len() {
        return Err(DeconvError::DimensionMismatch {
            expected: z.len(),
            got: out.len(),
        });
    }
    let n = z.len();
    if n <= 1 || lambda == 0.0 {
        out.copy_from_slice(z);
        return Ok(());
    }

    // Knot positions and the slope/intercept increments that apply past them.
    let mut knot = vec![0.0; 2 * n];
    let mut slope = vec![0.0; 2 * n];
    let mut icept = vec![0.0; 2 * n];
    let mut lower = vec![0.0; n - 1];
    let mut upper = vec![0.0; n - 1];

    lower[0] = z[0] - lambda;
    upper[0] = z[0] + lambda;
    let mut left = n - 1;
    let mut right = n;
    knot[left] = lower[0];
    knot[right] = upper[0];
    slope[left] = 1.0;
    icept[left] = lambda - z[0];
    slope[right] = -1.0;
    icept[right] = lambda + z[0];
    let mut first = (1.0, -lambda - z[1]);
    let mut last = (-1.0, -lambda + z[1]);

    for k in 1..n - 1 {
        // Walk up from the left until the derivative exceeds -λ.
        let (mut a_lo, mut b_lo) = first;
        let mut lo = left;
        while lo <= right {
            if a_lo * knot[lo] + b_lo > -lambda {
                break;
            }
            a_lo += slope[lo];
            b_lo += icept[lo];
            lo += 1;
        }
        lower[k] = (-lambda - b_lo) / a_lo;
        left = lo - 1;
        knot[left] = lower[k];

        // Walk down from the right until the derivative drops below λ.
        let (mut a_hi, mut b_hi) = last;
        let mut hi = right as isize;
        while hi >= left as isize {
            let h = hi as usize;
            if -a_hi * knot[h] - b_hi < lambda {
                break;
            }
            a_hi += slope[h];
            b_hi += icept[h];
            hi -= 1;
        }
        upper[k] = (lambda + b_hi) / -a_hi;
        right = (hi + 1) as usize;
        knot[right] = upper[k];

        slope[left] = a_lo;
        icept[left] = b_lo + lambda;
        slope[right] = a_hi;
        icept[right] = b_hi + lambda;
        first = (1.0, -lambda - z[k + 1]);
        last = (-1.0, -lambda + z[k + 1]);
    }

    // The last coordinate sits where the full derivative crosses zero.
    let (mut a_lo, mut b_lo) = first;
    let mut lo = left;
    while lo <= right {
        if a_lo * knot[lo] + b_lo > 0.0 {
            break;
        }
        a_lo += slope[lo];
        b_lo += icept[lo];
        lo += 1;
    }
    out[n - 1] = -b_lo / a_lo;

    for k in (0..n - 1).rev() {
        let next = out[k + 1];
        out[k] = next.clamp(lower[k], upper[k]);
    }
    Ok(())
}

/// Largest violation of the optimality conditions of `alpha` for the
/// problem with target `z` and weight `lambda`.
///
/// With `v_i = Σ_{j≤i} (z_j − α_j)`, `α` is optimal iff `v_{M} = 0`,
/// `|v_i| ≤ λ`, and `v_i = λ·sign(α_i − α_{i+1})` wherever the pair differs.
pub fn kkt_violation(z: &[f64], alpha: &[f64], lambda: f64) -> f64 {
    let mut v = 0.0;
    let mut worst: f64 = 0.0;
    let n = z.len();
    for i in 0..n {
        v += z[i] - alpha[i];
        if i + 1 == n {
            worst = worst.max(v.abs());
            break;
        }
        worst = worst.max(v.abs() - lambda);
        let jump = alpha[i] - alpha[i + 1];
        if jump != 0.0 {
            worst = worst.max((v - lambda * jump.signum()).abs());
        }
    }
    worst
}
