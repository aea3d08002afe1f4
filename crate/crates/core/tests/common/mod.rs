//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use deconv::grid::{Grid, KernelMatrix};
use deconv::simulate::{draw, benchmark_example, rng_from_seed};
use rand::Rng;

/// Solution of `min ½‖α − z‖² + λ Σ|α_i − α_{i+1}|` by a generic method:
/// projected coordinate descent on the dual box QP
/// `min_v ½‖z − Dᵀv‖²`, `|v_i| ≤ λ`, finished by solving the free block of
/// the identified active set exactly. Returns `(α, duality gap)`.
pub fn brute_prox(z: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let m = z.len();
    if m < 2 {
        return (z.to_vec(), 0.0);
    }
    let p = m - 1;
    // (D w)_i = w_i − w_{i+1}; (Dᵀ v)_j = v_j − v_{j−1}.
    let dt = |v: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|j| {
                let a = if j < p { v[j] } else { 0.0 };
                let b = if j > 0 { v[j - 1] } else { 0.0 };
                a - b
            })
            .collect()
    };
    let mut v = vec![0.0; p];
    for _ in 0..20_000 {
        let mut moved: f64 = 0.0;
        for i in 0..p {
            // Residual r = z − Dᵀv; coordinate i touches r_i and r_{i+1}.
            let r = |v: &[f64], j: usize| {
                let a = if j < p { v[j] } else { 0.0 };
                let b = if j > 0 { v[j - 1] } else { 0.0 };
                z[j] - (a - b)
            };
            // d/dv_i ½‖r‖² = −r_i + r_{i+1}; curvature 2.
            let g = -r(&v, i) + r(&v, i + 1);
            let next = (v[i] - g / 2.0).clamp(-lambda, lambda);
            moved = moved.max((next - v[i]).abs());
            v[i] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    polish_active_set(z, lambda, &mut v);
    let alpha: Vec<f64> = z.iter().zip(dt(&v)).map(|(zi, d)| zi - d).collect();
    (alpha.clone(), duality_gap(z, lambda, &alpha, &v))
}

/// Re-solves the unconstrained coordinates of the dual exactly with the bound
/// coordinates fixed, keeping the result only if it stays feasible.
fn polish_active_set(z: &[f64], lambda: f64, v: &mut [f64]) {
    let p = v.len();
    let tol = 1e-9 * lambda.max(1.0);
    let free: Vec<usize> = (0..p).filter(|&i| lambda - v[i].abs() > tol).collect();
    if free.is_empty() {
        return;
    }
    // Normal equations of min ½‖z − Dᵀv‖² over the free block: (D Dᵀ)_FF v_F = (D z)_F − (D Dᵀ)_FB v_B,
    // with D Dᵀ tridiagonal (2 on the diagonal, −1 off it).
    let ddt = |i: usize, j: usize| -> f64 {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    };
    let nf = free.len();
    let mut a = vec![vec![0.0; nf + 1]; nf];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r][c] = ddt(i, j);
        }
        let mut rhs = z[i] - z[i + 1];
        for j in 0..p {
            if !free.contains(&j) {
                rhs -= ddt(i, j) * v[j];
            }
        }
        a[r][nf] = rhs;
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..nf {
        let piv = (col..nf).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for row in col + 1..nf {
            let f = a[row][col] / a[col][col];
            for k in col..=nf {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut sol = vec![0.0; nf];
    for r in (0..nf).rev() {
        let s: f64 = (r + 1..nf).map(|k| a[r][k] * sol[k]).sum();
        sol[r] = (a[r][nf] - s) / a[r][r];
    }
    if sol.iter().all(|x| x.abs() <= lambda) {
        for (&i, x) in free.iter().zip(sol) {
            v[i] = x;
        }
    }
}

/// Primal objective at `α` minus dual objective at `v`.
pub fn duality_gap(z: &[f64], lambda: f64, alpha: &[f64], v: &[f64]) -> f64 {
    let primal = 0.5 * alpha.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        + lambda * alpha.windows(2).map(|w| (w[0] - w[1]).abs()).sum::<f64>();
    let m = z.len();
    let p = v.len();
    let r2: f64 = (0..m)
        .map(|j| {
            let a = if j < p { v[j] } else { 0.0 };
            let b = if j > 0 { v[j - 1] } else { 0.0 };
            (z[j] - (a - b)).powi(2)
        })
        .sum();
    let dual = 0.5 * z.iter().map(|x| x * x).sum::<f64>() - 0.5 * r2;
    primal - dual
}

/// Central finite-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor of one.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random grid with `d` bins, counts up to `max_count` and a random θ of moderate size.
pub fn random_instance(d: usize, max_count: u64, seed: u64) -> (Grid, KernelMatrix, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let width = rng.gen_range(0.1..0.6);
    let start = rng.gen_range(-3.0..0.0);
    let mids: Vec<f64> = (0..d).map(|i| start + width * i as f64).collect();
    let counts: Vec<u64> = (0..d).map(|_| rng.gen_range(0..=max_count)).collect();
    let grid = Grid::new(mids, width, counts).unwrap();
    let kernel = KernelMatrix::build(&grid);
    let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..3.0)).collect();
    (grid, kernel, theta)
}

/// Binned samples from one of the benchmark mixtures.
pub fn example_grid(example: u32, n: usize, bins: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Grid, KernelMatrix) {
    let spec = benchmark_example(example).unwrap();
    let (mu, y) = draw(&spec, n, seed);
    let grid = Grid::from_samples(&y, bins).unwrap();
    let kernel = KernelMatrix::build(&grid);
    (mu, y, grid, kernel)
}

pub fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
