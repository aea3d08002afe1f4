mod common;

use common::{example_grid, sup_norm};
use deconv::objective::Norm;
use deconv::path::{compute_path, compute_path_at, hellinger_sq, TauGrid};
use deconv::solvers::SolverConfig;

fn short_grid() -> TauGrid {
    TauGrid::new(1e5, 1e-2, 15).unwrap()
}

#[test]
fn penalty_norm_grows_as_tau_shrinks() {
    let (_, _, grid, kernel) = example_grid(4, 3000, 80, 1);
    for norm in [Norm::L1, Norm::L2] {
        let path = compute_path(&grid, &kernel, 1, norm, &short_grid(), &SolverConfig::default()).unwrap();
        assert_eq!(path.entries.len(), 15);
        for w in path.entries.windows(2) {
            assert!(w[1].penalty_norm >= w[0].penalty_norm - 1e-6, "{norm:?}: {} -> {}", w[0].penalty_norm, w[1].penalty_norm);
        }
        let first = path.entries[0].penalty_norm;
        assert!(path.entries.iter().all(|e| e.penalty_norm >= first - 1e-6));
    }
}

#[test]
fn marginals_move_less_than_mixing_densities() {
    let (_, _, grid, kernel) = example_grid(1, 3000, 80, 2);
    let path = compute_path(&grid, &kernel, 1, Norm::L1, &short_grid(), &SolverConfig::default()).unwrap();
    let width = grid.width();
    for w in path.entries.windows(2) {
        let (a, b) = (&w[0].estimate, &w[1].estimate);
        // The marginals are only seen on the grid, so compare their normalized restrictions.
        let norm = |m: &[f64]| {
            let s: f64 = m.iter().sum::<f64>() * width;
            m.iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let hm = hellinger_sq(&norm(&a.m_hat), &norm(&b.m_hat), width);
        let hf = hellinger_sq(&a.f_hat, &b.f_hat, width);
        assert!(hm <= hf + 1e-9, "marginal {hm} vs mixing {hf}");
    }
}

#[test]
fn nearly_equal_taus_give_nearly_equal_fits() {
    let (_, _, grid, kernel) = example_grid(2, 2000, 60, 3);
    let cfg = SolverConfig::default();
    for norm in [Norm::L1, Norm::L2] {
        let path = compute_path_at(&grid, &kernel, 1, norm, &[5.0 * (1.0 + 1e-9), 5.0], &cfg).unwrap();
        assert!(sup_norm(&path.entries[0].estimate.f_hat, &path.entries[1].estimate.f_hat) <= 1e-3);
    }
}

#[test]
fn rejects_bad_tau_sequences() {
    let (_, _, grid, kernel) = example_grid(2, 500, 30, 4);
    let cfg = SolverConfig::default();
    assert!(compute_path_at(&grid, &kernel, 1, Norm::L2, &[1.0, 2.0], &cfg).is_err());
    assert!(compute_path_at(&grid, &kernel, 1, Norm::L2, &[], &cfg).is_err());
    assert!(compute_path(&grid, &kernel, 1, Norm::L2, &TauGrid { max: 1.0, min: 1.0, count: 3 }, &cfg).is_err());
}

#[test]
fn unconverged_entries_stay_on_the_path() {
    let (_, _, grid, kernel) = example_grid(1, 2000, 60, 5);
    let cfg = SolverConfig {
        max_outer_iters: 2,
        ..Default::default()
    };
    let path = compute_path(&grid, &kernel, 1, Norm::L1, &TauGrid::new(10.0, 0.1, 4).unwrap(), &cfg);
    match path {
        Ok(path) => {
            assert_eq!(path.entries.len(), 4);
            for e in path.entries.iter().filter(|e| !e.converged()) {
                assert!(e.estimate.diagnostics.message.is_some());
            }
        }
        Err(e) => assert_eq!(e, deconv::DeconvError::PathFailed),
    }
}
