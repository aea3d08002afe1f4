//! Dense BFGS with a strong-Wolfe line search (Nocedal & Wright, Alg. 3.5/3.6).
//!
//! The inverse-Hessian approximation can be handed back in to warm-start a
//! sequence of closely related problems, which is how the ADMM theta-step
//! uses it.

use crate::error::Result;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Stop once `‖∇f‖∞` falls to this value.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_evals_per_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iters: 2000,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_evals_per_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: BfgsStatus,
    /// Objective value after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
    /// Final inverse-Hessian approximation, row-major.
    pub inv_hessian: Vec<f64>,
}

impl BfgsOutcome {
    pub fn grad_inf(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Evaluates `f` along `x + alpha d`. A failed evaluation (for example an
/// exponent out of range) is reported as `+inf` so the search backs off.
fn probe<F>(f: &mut F, x: &[f64], d: &[f64], alpha: f64, evals: &mut usize) -> Probe
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    let mut g = vec![0.0; x.len()];
    *evals += 1;
    match f(&xa, &mut g) {
        Ok(v) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Probe {
            alpha,
            value: v,
            slope: dot(&g, d),
            x: xa,
            grad: g,
        },
        _ => Probe {
            alpha,
            value: f64::INFINITY,
            slope: f64::NAN,
            x: xa,
            grad: g,
        },
    }
}

/// Minimizer of the cubic through two points with known slopes, if it lies
/// strictly inside the bracket.
fn cubic_step(a: &Probe, b: &Probe) -> Option<f64> {
    if !a.value.is_finite() || !b.value.is_finite() || !a.slope.is_finite() || !b.slope.is_finite() {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    value: f64,
    slope0: f64,
    d: &[f64],
    alpha_init: f64,
    opts: &BfgsOptions,
    evals: &mut usize,
) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    // Slack for sufficient decrease so roundoff in f near the optimum does not
    // reject every step.
    let slack = 1e3 * EPS * (1.0 + value.abs());
    let armijo = |p: &Probe| p.value <= value + opts.c1 * p.alpha * slope0 + slack;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * slope0;

    let mut prev = Probe {
        alpha: 0.0,
        value,
        slope: slope0,
        x: x.to_vec(),
        grad: Vec::new(),
    };
    let mut alpha = alpha_init;
    let mut budget = opts.max_evals_per_search;
    let mut first = true;
    while budget > 0 {
        budget -= 1;
        let cur = probe(f, x, d, alpha, evals);
        if !armijo(&cur) || (!first && cur.value >= prev.value) {
            return zoom(f, x, value, slope0, d, prev, cur, opts, budget, evals);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(f, x, value, slope0, d, cur, prev, opts, budget, evals);
        }
        first = false;
        let next = match cubic_step(&prev, &cur) {
            Some(t) if t > 1.1 * cur.alpha && t < 10.0 * cur.alpha => t,
            _ => 2.0 * cur.alpha,
        };
        prev = cur;
        alpha = next;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f: &mut F,
    x: &[f64],
    value: f64,
    slope0: f64,
    d: &[f64],
    mut lo: Probe,
    mut hi: Probe,
    opts: &BfgsOptions,
    mut budget: usize,
    evals: &mut usize,
) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let slack = 1e3 * EPS * (1.0 + value.abs());
    while budget > 0 {
        budget -= 1;
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= EPS * b.max(1e-300) {
            break;
        }
        let guard = 0.1 * width;
        let alpha = match cubic_step(&lo, &hi) {
            Some(t) if t > a + guard && t < b - guard => t,
            _ => 0.5 * (a + b),
        };
        let cur = probe(f, x, d, alpha, evals);
        if cur.value > value + opts.c1 * alpha * slope0 + slack || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -opts.c2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
    }
    // Accept the best decreasing point found even if curvature is not met.
    (lo.alpha > 0.0 && lo.value < value).then_some(lo)
}

/// Minimizes `f` from `x0`. `f` writes the gradient into its second argument
/// and returns the value. `inv_hessian` optionally seeds the approximation.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &BfgsOptions, inv_hessian: Option<Vec<f64>>) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad)?;
    let mut evals = 1;
    let mut trace = vec![value];
    // A supplied metric is used as is; otherwise the identity is rescaled after the first step.
    let (mut h, mut fresh) = match inv_hessian {
        Some(h) if h.len() == n * n => (h, false),
        _ => (identity(n), true),
    };
    let mut iterations = 0;
    let mut status = BfgsStatus::MaxIterations;
    let mut hy = vec![0.0; n];
    let mut dir = vec![0.0; n];

    loop {
        if inf_norm(&grad) <= opts.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        mat_vec(&h, &grad, &mut dir, n);
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            slope = dot(&grad, &dir);
        }
        let alpha_init = if fresh {
            (1.0 / inf_norm(&dir)).min(1.0)
        } else {
            1.0
        };
        let step = strong_wolfe(&mut f, &x, value, slope, &dir, alpha_init, opts, &mut evals);
        let Some(step) = step else {
            if !fresh {
                // Retry once along steepest descent with a reset metric.
                h = identity(n);
                fresh = true;
                continue;
            }
            status = BfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x = step.x;
        grad = step.grad;
        value = step.value;
        trace.push(value);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy, &mut hy, n);
        }
    }

    Ok(BfgsOutcome {
        x,
        value,
        grad,
        iterations,
        evaluations: evals,
        status,
        trace,
        inv_hessian: h,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(h: &[f64], v: &[f64], out: &mut [f64], n: usize) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&h[i * n..(i + 1) * n], v);
    }
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`, expanded to rank-two form.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, hy: &mut [f64], n: usize) {
    let rho = 1.0 / sy;
    mat_vec(h, y, hy, n);
    let yhy = dot(y, hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..n {
        let row = &mut h[i * n..(i + 1) * n];
        let si = s[i];
        let hyi = hy[i];
        for j in 0..n {
            row[j] += coef * si * s[j] - rho * (si * hy[j] + hyi * s[j]);
        }
    }
}
