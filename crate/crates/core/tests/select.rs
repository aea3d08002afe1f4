mod common;

use common::example_grid;
use deconv::objective::{Norm, PenaltySpec};
use deconv::operators::DiffOperator;
use deconv::path::{compute_path, TauGrid};
use deconv::select::{
    aic_select, count_knots, default_zero_tol, heldout_report, heldout_score, heldout_select, knot_values, split_samples,
    HeldoutOptions,
};
use deconv::solvers::{solve_l2, SolverConfig};
use deconv::DeconvError;

fn taus() -> TauGrid {
    TauGrid::new(1e4, 1e-1, 10).unwrap()
}

#[test]
fn aic_picks_the_minimum_over_converged_entries() {
    let (_, _, grid, kernel) = example_grid(1, 4000, 80, 1);
    let path = compute_path(&grid, &kernel, 1, Norm::L1, &taus(), &SolverConfig::default()).unwrap();
    let report = aic_select(&path, &grid, &kernel, None).unwrap();
    let best = report.scores[report.chosen_index].score;
    for s in report.scores.iter().filter(|s| s.converged) {
        assert!(best <= s.score);
    }
    assert_eq!(report.chosen_tau, path.entries[report.chosen_index].tau);
    // Scores are nll + k + 1 + knots.
    let obj = deconv::objective::PoissonObjective::new(&grid, &kernel).unwrap();
    for (s, e) in report.scores.iter().zip(&path.entries) {
        let nll = obj.value(&e.estimate.theta).unwrap();
        assert!((s.score - (nll + 2.0 + s.knots.unwrap() as f64)).abs() < 1e-6);
    }
}

#[test]
fn aic_rejects_l2_paths() {
    let (_, _, grid, kernel) = example_grid(1, 500, 30, 2);
    let path = compute_path(&grid, &kernel, 1, Norm::L2, &TauGrid::new(10.0, 1.0, 2).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(aic_select(&path, &grid, &kernel, None).unwrap_err(), DeconvError::AicRequiresL1);
}

#[test]
fn knot_count_ignores_constant_shifts() {
    let (_, _, grid, kernel) = example_grid(4, 2000, 60, 3);
    let path = compute_path(&grid, &kernel, 1, Norm::L1, &TauGrid::new(100.0, 1.0, 3).unwrap(), &SolverConfig::default()).unwrap();
    let mut entry = path.entries[1].clone();
    entry.admm = None;
    let values = knot_values(&entry, 1).unwrap();
    let before = count_knots(&values, default_zero_tol(&values));
    entry.estimate.theta.iter_mut().for_each(|t| *t += 3.25);
    let shifted = knot_values(&entry, 1).unwrap();
    assert_eq!(count_knots(&shifted, default_zero_tol(&shifted)), before);
    // A constant θ has no knots.
    entry.estimate.theta.iter_mut().for_each(|t| *t = 0.7);
    let flat = knot_values(&entry, 1).unwrap();
    assert_eq!(count_knots(&flat, default_zero_tol(&flat)), 0);
}

#[test]
fn heldout_penalty_is_split_invariant() {
    let (_, y, grid, kernel) = example_grid(4, 2000, 50, 4);
    let (train, held) = split_samples(&y, 0.75, 9).unwrap();
    let train = grid.recount(&train).unwrap();
    let held = grid.recount(&held).unwrap();
    let op = DiffOperator::new(grid.len(), 2).unwrap();
    let est = solve_l2(&train, &kernel, &PenaltySpec::new(1, Norm::L2, 10.0).unwrap(), None, &SolverConfig::default()).unwrap();
    let shift = held.log_scale() - train.log_scale();
    let shifted: Vec<f64> = est.theta.iter().map(|t| t + shift).collect();
    let (a, b) = (op.apply(&est.theta).unwrap(), op.apply(&shifted).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    // Scoring against an identical split with equal sizes reduces to nll + penalty at zero shift.
    let score = heldout_score(&est.theta, &train, &train, &kernel, &op).unwrap();
    let nll = deconv::objective::nll(&est.theta, &train, &kernel).unwrap();
    let pen: f64 = a.iter().map(|v| v.abs()).sum();
    assert!((score - nll - pen).abs() < 1e-8 * nll.abs().max(1.0));
}

#[test]
fn heldout_selection_is_deterministic() {
    let (_, y, grid, kernel) = example_grid(4, 3000, 60, 5);
    let opts = HeldoutOptions {
        taus: taus(),
        seed: 17,
        ..Default::default()
    };
    let cfg = SolverConfig::default();
    let a = heldout_select(&y, &grid, &kernel, &opts, &cfg).unwrap();
    let b = heldout_select(&y, &grid, &kernel, &opts, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(a.refit.theta, b.refit.theta);
    assert_eq!(a.report.split_seed, Some(17));
    let best = a.report.scores[a.report.chosen_index].score;
    assert!(a.report.scores.iter().filter(|s| s.converged).all(|s| best <= s.score));
}

#[test]
fn heldout_needs_an_l2_path() {
    let (_, _, grid, kernel) = example_grid(1, 500, 30, 6);
    let path = compute_path(&grid, &kernel, 1, Norm::L1, &TauGrid::new(10.0, 1.0, 2).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(heldout_report(&path, &grid, &kernel, 0).unwrap_err(), DeconvError::HeldoutRequiresL2);
}
