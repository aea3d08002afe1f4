use deconv::grid::Grid;
use deconv::simulate::{density_mse, draw, mass_interval, benchmark_example, run_benchmark, BenchConfig, Method, MixtureSpec};
use deconv::TauGrid;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn draws_have_the_mixture_moments() {
    let spec = benchmark_example(1).unwrap();
    let n = 1_000_000;
    let (mu, y) = draw(&spec, n, 3);
    let (m, v) = mean_var(&mu);
    assert!(m.abs() <= 4.0 * (v / n as f64).sqrt(), "mean {m}");
    let (_, vy) = mean_var(&y);
    // Var(y) − Var(μ) = 1; the difference of two correlated sample variances
    // has standard error about sqrt(2 (1 + 2 Var μ) / n).
    let se = (2.0 * (1.0 + 2.0 * v) / n as f64).sqrt();
    assert!(((vy - v) - 1.0).abs() <= 4.0 * se, "{}", vy - v);
}

#[test]
fn draws_are_reproducible() {
    let spec = benchmark_example(4).unwrap();
    assert_eq!(draw(&spec, 100, 9), draw(&spec, 100, 9));
    assert_ne!(draw(&spec, 100, 9).1, draw(&spec, 100, 10).1);
}

#[test]
fn mass_interval_matches_monte_carlo_quantiles() {
    let spec = benchmark_example(3).unwrap();
    let (lo, hi) = mass_interval(&spec, 0.99).unwrap();
    let (mut mu, _) = draw(&spec, 10_000_000, 5);
    mu.sort_unstable_by(f64::total_cmp);
    let q = |p: f64| mu[(p * (mu.len() - 1) as f64).round() as usize];
    assert!((lo - q(0.005)).abs() < 0.01, "{lo} vs {}", q(0.005));
    assert!((hi - q(0.995)).abs() < 0.01, "{hi} vs {}", q(0.995));
}

#[test]
fn mass_intervals_nest_and_match_normal_quantiles() {
    let unit = MixtureSpec::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
    let (lo, hi) = mass_interval(&unit, 0.95).unwrap();
    assert!((hi - 1.959963984540054).abs() < 1e-8 && (lo + hi).abs() < 1e-9);
    for id in 1..=4 {
        let spec = benchmark_example(id).unwrap();
        let a = mass_interval(&spec, 0.95).unwrap();
        let b = mass_interval(&spec, 0.99).unwrap();
        assert!(b.0 < a.0 && a.1 < b.1);
    }
    let sym = mass_interval(&benchmark_example(1).unwrap(), 0.95).unwrap();
    assert!((sym.0 + sym.1).abs() < 1e-8);
}

#[test]
fn density_mse_of_exact_and_offset_densities() {
    let spec = benchmark_example(2).unwrap();
    let mids: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64).collect();
    let grid = Grid::new(mids.clone(), 0.1, vec![1; 101]).unwrap();
    let exact: Vec<f64> = mids.iter().map(|x| spec.pdf(*x)).collect();
    assert_eq!(density_mse(&exact, &grid, &spec, (-2.0, 2.0)).unwrap(), 0.0);
    let offset: Vec<f64> = exact.iter().map(|f| f + 0.1).collect();
    assert!((density_mse(&offset, &grid, &spec, (-2.0, 2.0)).unwrap() - 0.01).abs() < 1e-12);
    assert!(density_mse(&exact, &grid, &spec, (10.0, 11.0)).is_err());
}

#[test]
fn weights_of_example_two_sum_to_one() {
    let spec = benchmark_example(2).unwrap();
    assert!((spec.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert_eq!(benchmark_example(3).unwrap().locations, vec![0.0; 3]);
    assert!(benchmark_example(5).is_err());
}

#[test]
fn small_benchmark_is_finite_and_deterministic() {
    let cfg = BenchConfig {
        bins: 40,
        taus: TauGrid::new(1e3, 1e-1, 6).unwrap(),
        ..Default::default()
    };
    for method in [Method::L1, Method::L2] {
        let a = run_benchmark(1, 200, 2, method, &cfg).unwrap();
        let b = run_benchmark(1, 200, 2, method, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for (ra, rb) in a.replicates.iter().zip(&b.replicates) {
            assert!(ra.mse95.is_finite() && ra.means_mse.is_finite());
            assert_eq!((ra.mse95, ra.means_mse, ra.chosen_tau), (rb.mse95, rb.means_mse, rb.chosen_tau));
        }
        let mean = a.replicates.iter().map(|r| r.mse95).sum::<f64>() / 2.0;
        assert!((a.mse95.mean - mean).abs() < 1e-15);
    }
}
