//! Benchmark mixtures, synthetic draws and the Monte Carlo scoring harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DeconvError, Result};
use crate::grid::{Grid, KernelMatrix, DEFAULT_BINS};
use crate::objective::{Norm, ThetaEstimate};
use crate::path::{compute_path, TauGrid};
use crate::select::{aic_select, heldout_select, HeldoutOptions};
use crate::solvers::SolverConfig;
use crate::tweedie::{means_mse, posterior_means};

/// Gaussian mixture `Σ w_i N(μ | location_i, variance_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub locations: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, locations: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || locations.len() != k || variances.len() != k {
            return Err(DeconvError::InvalidMixture("component arrays must be nonempty and of equal length".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(DeconvError::InvalidMixture("weights must be positive".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(DeconvError::InvalidMixture("weights must sum to one".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(DeconvError::InvalidMixture("variances must be positive".into()));
        }
        if locations.iter().any(|m| !m.is_finite()) {
            return Err(DeconvError::InvalidMixture("locations must be finite".into()));
        }
        Ok(MixtureSpec {
            weights,
            locations,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.locations).map(|(w, m)| w * m).sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.iter()
            .map(|(w, m, v)| {
                let z = (x - m) / v.sqrt();
                w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.iter()
            .map(|(w, m, v)| w * standard_normal().cdf((x - m) / v.sqrt()))
            .sum()
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.locations)
            .zip(&self.variances)
            .map(|((&w, &m), &v)| (w, m, v))
    }

    /// Quantile by bisection on the analytic CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let spread = self.variances.iter().fold(0.0f64, |a, v| a.max(v.sqrt()));
        let lo_loc = self.locations.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_loc = self.locations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo_loc - 40.0 * spread;
        let mut hi = hi_loc + 40.0 * spread;
        while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// The four benchmark mixing densities.
pub fn benchmark_example(id: u32) -> Result<MixtureSpec> {
    let spec = match id {
        1 => MixtureSpec::new(vec![0.2, 0.3, 0.3, 0.2], vec![-3.0, -1.5, 1.5, 3.0], vec![0.01; 4]),
        2 => MixtureSpec::new(vec![1.0 / 3.0; 3], vec![0.0, -2.0, 3.0], vec![2.0, 0.1, 0.4]),
        3 => MixtureSpec::new(vec![0.3, 0.4, 0.3], vec![0.0, 0.0, 0.0], vec![0.1, 1.0, 9.0]),
        4 => MixtureSpec::new(vec![0.5, 0.4, 0.1], vec![-1.5, 1.5, 4.0], vec![1.0, 2.0, 2.0]),
        other => return Err(DeconvError::UnknownExample(other)),
    };
    Ok(spec.expect("benchmark mixtures are valid"))
}

/// Display scale of the density MSE for each example (x10^2, x10^3, x10^3, x10^4).
pub fn mse_scale(id: u32) -> f64 {
    match id {
        1 => 1e2,
        2 | 3 => 1e3,
        _ => 1e4,
    }
}

/// Seedable generator used for every random stream in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Standard normal variate by inverse CDF of an open-interval uniform.
pub fn normal_variate<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return standard_normal().inverse_cdf(u);
        }
    }
}

/// Draws `n` latent means from the mixture and observations `y = μ + ε`.
pub fn draw(spec: &MixtureSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let mut cumulative = Vec::with_capacity(spec.components());
    let mut acc = 0.0;
    for w in &spec.weights {
        acc += w;
        cumulative.push(acc);
    }
    let sds: Vec<f64> = spec.variances.iter().map(|v| v.sqrt()).collect();
    let mut mu = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * acc;
        let c = cumulative.iter().position(|&c| u < c).unwrap_or(spec.components() - 1);
        let m = spec.locations[c] + sds[c] * normal_variate(&mut rng);
        mu.push(m);
        y.push(m + normal_variate(&mut rng));
    }
    (mu, y)
}

/// Central interval holding `mass` of the mixture.
pub fn mass_interval(spec: &MixtureSpec, mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(DeconvError::InvalidMixture(format!("mass {mass} must lie in (0, 1)")));
    }
    Ok((spec.quantile(0.5 * (1.0 - mass)), spec.quantile(0.5 * (1.0 + mass))))
}

/// Mean of `(f̂(ξ_j) − f_0(ξ_j))²` over midpoints inside `interval`, unscaled.
pub fn density_mse(f_hat: &[f64], grid: &Grid, spec: &MixtureSpec, interval: (f64, f64)) -> Result<f64> {
    if f_hat.len() != grid.len() {
        return Err(DeconvError::LengthMismatch(f_hat.len(), grid.len()));
    }
    let (lo, hi) = interval;
    let (sum, count) = grid
        .midpoints()
        .iter()
        .zip(f_hat)
        .filter(|(x, _)| **x >= lo && **x <= hi)
        .fold((0.0, 0usize), |(s, c), (&x, &f)| (s + (f - spec.pdf(x)).powi(2), c + 1));
    if count == 0 {
        return Err(DeconvError::EmptyInterval(lo, hi));
    }
    Ok(sum / count as f64)
}

/// Estimation pipeline used by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// l1 path with surrogate-AIC selection.
    L1,
    /// l2 path with held-out selection.
    L2,
}

impl std::str::FromStr for Method {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Norm>()? {
            Norm::L1 => Ok(Method::L1),
            Norm::L2 => Ok(Method::L2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub bins: usize,
    pub order: usize,
    pub taus: TauGrid,
    pub solver: SolverConfig,
    pub base_seed: u64,
    /// Worker threads for replicates; `0` uses the rayon default. Not part
    /// of serialized reports, which must not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            bins: DEFAULT_BINS,
            order: 1,
            taus: TauGrid::default(),
            solver: SolverConfig::default(),
            base_seed: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub mse95: f64,
    pub mse99: f64,
    pub means_mse: f64,
    pub chosen_tau: f64,
    /// Local maxima of `f̂` above 10% of its peak.
    pub modes: Vec<f64>,
    /// Pre-renormalization mass of the selected estimate.
    pub raw_mass: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let count = finite.len();
        if count == 0 {
            return Aggregate {
                mean: f64::NAN,
                std_error: f64::NAN,
                count,
            };
        }
        let mean = finite.iter().sum::<f64>() / count as f64;
        let std_error = if count > 1 {
            let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Aggregate { mean, std_error, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub example: u32,
    pub n: usize,
    pub method: Method,
    pub config: BenchConfig,
    /// Display multiplier for the density MSE of this example.
    pub mse_scale: f64,
    pub replicates: Vec<ReplicateResult>,
    pub mse95: Aggregate,
    pub mse99: Aggregate,
    pub means_mse: Aggregate,
}

/// Local maxima of `f` (plateaus counted once) whose height exceeds
/// `rel_height` times the global maximum; returns their midpoints.
pub fn local_maxima(f: &[f64], grid: &Grid, rel_height: f64) -> Vec<f64> {
    let peak = f.iter().copied().fold(0.0, f64::max);
    let mut modes = Vec::new();
    let d = f.len();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j + 1 < d && f[j + 1] == f[i] {
            j += 1;
        }
        let left_lower = i == 0 || f[i - 1] < f[i];
        let right_lower = j + 1 == d || f[j + 1] < f[i];
        if left_lower && right_lower && f[i] > rel_height * peak {
            let mid = (i + j) / 2;
            modes.push(grid.midpoints()[mid]);
        }
        i = j + 1;
    }
    modes
}

/// Full pipeline for one seed: draw, bin, fit the path, select, score.
pub fn run_replicate(spec: &MixtureSpec, n: usize, method: Method, cfg: &BenchConfig, seed: u64) -> Result<(ReplicateResult, ThetaEstimate, Grid)> {
    let start = std::time::Instant::now();
    let (mu, y) = draw(spec, n, seed);
    let grid = Grid::from_samples(&y, cfg.bins)?;
    let kernel = KernelMatrix::build(&grid);
    let (estimate, chosen_tau) = match method {
        Method::L1 => {
            let path = compute_path(&grid, &kernel, cfg.order, Norm::L1, &cfg.taus, &cfg.solver)?;
            let report = aic_select(&path, &grid, &kernel, None)?;
            let entry = path.entries[report.chosen_index].estimate.clone();
            (entry, report.chosen_tau)
        }
        Method::L2 => {
            let opts = HeldoutOptions {
                order: cfg.order,
                taus: cfg.taus.clone(),
                seed,
                ..Default::default()
            };
            let fit = heldout_select(&y, &grid, &kernel, &opts, &cfg.solver)?;
            (fit.refit, fit.report.chosen_tau)
        }
    };
    let f_hat = &estimate.f_hat;
    let mse95 = density_mse(f_hat, &grid, spec, mass_interval(spec, 0.95)?)?;
    let mse99 = density_mse(f_hat, &grid, spec, mass_interval(spec, 0.99)?)?;
    let means = posterior_means(&estimate, &grid, &y)?;
    let means_score = means_mse(&means.mu_hat, &mu)?;
    let result = ReplicateResult {
        seed,
        mse95,
        mse99,
        means_mse: means_score,
        chosen_tau,
        modes: local_maxima(f_hat, &grid, 0.1),
        raw_mass: estimate.diagnostics.raw_mass,
        error: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((result, estimate, grid))
}

/// Runs `reps` replicates with seeds `base_seed + i`. Failures are recorded
/// per replicate rather than aborting the batch.
pub fn run_benchmark(example: u32, n: usize, reps: usize, method: Method, cfg: &BenchConfig) -> Result<BenchResult> {
    let spec = benchmark_example(example)?;
    if reps == 0 {
        return Err(DeconvError::InvalidConfig("reps must be at least 1".into()));
    }
    cfg.solver.validate()?;
    let run = |i: usize| {
        let seed = cfg.base_seed.wrapping_add(i as u64);
        match run_replicate(&spec, n, method, cfg, seed) {
            Ok((r, _, _)) => {
                log::info!("example {example} n={n} seed {seed}: mse95 {:e} in {:.1}s", r.mse95, r.wall_seconds);
                r
            }
            Err(e) => ReplicateResult {
                seed,
                mse95: f64::NAN,
                mse99: f64::NAN,
                means_mse: f64::NAN,
                chosen_tau: f64::NAN,
                modes: Vec::new(),
                raw_mass: f64::NAN,
                error: Some(e.to_string()),
                wall_seconds: 0.0,
            },
        }
    };
    let replicates: Vec<ReplicateResult> = if cfg.jobs == 1 {
        (0..reps).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| DeconvError::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..reps).into_par_iter().map(run).collect())
    };
    let collect = |f: fn(&ReplicateResult) -> f64| Aggregate::of(&replicates.iter().map(f).collect::<Vec<_>>());
    Ok(BenchResult {
        example,
        n,
        method,
        config: cfg.clone(),
        mse_scale: mse_scale(example),
        mse95: collect(|r| r.mse95),
        mse99: collect(|r| r.mse99),
        means_mse: collect(|r| r.means_mse),
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_parameters() {
        let e1 = benchmark_example(1).unwrap();
        assert_eq!(e1.locations, vec![-3.0, -1.5, 1.5, 3.0]);
        assert_eq!(e1.weights, vec![0.2, 0.3, 0.3, 0.2]);
        assert_eq!(e1.variances, vec![0.01; 4]);
        let e3 = benchmark_example(3).unwrap();
        assert!(e3.locations.iter().all(|m| *m == 0.0));
        assert_eq!(e3.variances, vec![0.1, 1.0, 9.0]);
        let e2 = benchmark_example(2).unwrap();
        assert_eq!(e2.locations, vec![0.0, -2.0, 3.0]);
        assert_eq!(e2.variances, vec![2.0, 0.1, 0.4]);
        assert!((e2.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let e4 = benchmark_example(4).unwrap();
        assert_eq!(e4.weights, vec![0.5, 0.4, 0.1]);
        assert_eq!(e4.locations, vec![-1.5, 1.5, 4.0]);
        assert_eq!(e4.variances, vec![1.0, 2.0, 2.0]);
        assert_eq!(benchmark_example(5), Err(DeconvError::UnknownExample(5)));
    }

    #[test]
    fn invalid_mixtures() {
        assert!(MixtureSpec::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(MixtureSpec::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(MixtureSpec::new(vec![1.0], vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn standard_normal_interval() {
        let spec = MixtureSpec::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let (lo, hi) = mass_interval(&spec, 0.95).unwrap();
        assert!((lo + 1.959_963_984_540_054).abs() < 1e-8);
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-8);
    }

    #[test]
    fn intervals_nest_and_respect_symmetry() {
        for id in 1..=4 {
            let spec = benchmark_example(id).unwrap();
            let i95 = mass_interval(&spec, 0.95).unwrap();
            let i99 = mass_interval(&spec, 0.99).unwrap();
            assert!(i99.0 < i95.0 && i95.1 < i99.1);
        }
        let (lo, hi) = mass_interval(&benchmark_example(1).unwrap(), 0.95).unwrap();
        assert!((lo + hi).abs() < 1e-9);
    }

    #[test]
    fn density_mse_simple_cases() {
        let spec = benchmark_example(4).unwrap();
        let grid = Grid::new((0..50).map(|i| -5.0 + 0.2 * i as f64).collect(), 0.2, vec![1; 50]).unwrap();
        let truth: Vec<f64> = grid.midpoints().iter().map(|&x| spec.pdf(x)).collect();
        let iv = mass_interval(&spec, 0.95).unwrap();
        assert_eq!(density_mse(&truth, &grid, &spec, iv).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|f| f + 0.1).collect();
        assert!((density_mse(&shifted, &grid, &spec, iv).unwrap() - 0.01).abs() < 1e-12);
        assert!(density_mse(&truth, &grid, &spec, (100.0, 101.0)).is_err());
    }

    #[test]
    fn draws_are_deterministic() {
        let spec = benchmark_example(2).unwrap();
        assert_eq!(draw(&spec, 100, 7), draw(&spec, 100, 7));
        assert_ne!(draw(&spec, 100, 7).1, draw(&spec, 100, 8).1);
    }

    #[test]
    fn plateau_counts_once() {
        let grid = Grid::new((0..7).map(|i| i as f64).collect(), 1.0, vec![1; 7]).unwrap();
        let f = [0.0, 1.0, 1.0, 0.5, 0.05, 0.06, 0.0];
        assert_eq!(local_maxima(&f, &grid, 0.1), vec![1.0]);
        assert_eq!(local_maxima(&f, &grid, 0.01).len(), 2);
    }
}
