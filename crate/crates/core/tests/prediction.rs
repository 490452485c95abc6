use volterra_ident::cases::{CaseDefinition, CaseName};
use volterra_ident::prediction::{coverage_check, predict_band, truth_trajectories, TRUTH_STREAM};
use volterra_ident::simulator::{derive_seed, simulate_ensemble, TimeGrid, Trajectory};

#[test]
fn band_covers_fresh_paths_of_the_same_model() {
    for (name, lambda, horizon) in [
        (CaseName::Case1, 5.0, (3.0, 4.0)),
        (CaseName::Case2, 1.0, (0.5, 1.0)),
        (CaseName::Case3, 1.0, (0.5, 1.0)),
    ] {
        let case = CaseDefinition::builtin(name).unwrap();
        let theta = 0.97;
        let band = predict_band(&case, theta, lambda, horizon, 1000, 250, 0.95, 11).unwrap();
        // Fresh paths on the same nodes, from an independent seed stream.
        let lead = ((horizon.0 - case.t0) / band.grid.dt()).round() as usize;
        let grid = TimeGrid::new(case.t0, horizon.1, lead + 250).unwrap();
        let spec = case.problem_on(theta, lambda, grid).unwrap();
        let fresh = simulate_ensemble(&spec, 1000, derive_seed(11, 99)).unwrap();
        let report = coverage_check(&band, &fresh.paths).unwrap();
        assert!((report.overall - 0.95).abs() <= 0.03, "{name}: {}", report.overall);
    }
}

#[test]
fn band_widens_over_the_horizon() {
    let case = CaseDefinition::builtin(CaseName::Case1).unwrap();
    let band = predict_band(&case, 1.0, 5.0, (3.0, 4.0), 1000, 250, 0.95, 3).unwrap();
    let w = band.width();
    assert!(w.iter().chain(&band.lower).chain(&band.upper).all(|x| x.is_finite()));
    assert!(w.iter().all(|&x| x > 0.0));
    assert!(w.last().unwrap() > w.first().unwrap());
    // Stochastic quantiles wobble, so compare averages of the two halves.
    let half = w.len() / 2;
    let first: f64 = w[..half].iter().sum::<f64>() / half as f64;
    let second: f64 = w[half..].iter().sum::<f64>() / (w.len() - half) as f64;
    assert!(second > first);
}

#[test]
fn ensemble_mean_lies_inside_the_band() {
    let case = CaseDefinition::builtin(CaseName::Case2).unwrap();
    let band = predict_band(&case, 1.0, 1.0, (0.5, 1.0), 1000, 250, 0.95, 5).unwrap();
    let mean = Trajectory {
        grid: band.grid.clone(),
        values: band.mean.clone(),
    };
    let report = coverage_check(&band, &[mean]).unwrap();
    assert_eq!(report.overall, 1.0);
    assert!(report.all_inside && report.passed);
}

#[test]
fn truth_on_a_finer_grid_is_interpolated() {
    let case = CaseDefinition::builtin(CaseName::Case3).unwrap();
    let band = predict_band(&case, 1.0, 1.0, (0.5, 1.0), 500, 250, 0.95, 8).unwrap();
    let truth = truth_trajectories(&case, 1.0, 1.0, 20, 1000, derive_seed(8, TRUTH_STREAM)).unwrap();
    assert_eq!(truth.len(), 20);
    let report = coverage_check(&band, &truth).unwrap();
    assert_eq!(report.fractions.len(), 20);
    // Correct model: most truth points fall inside a 95% band.
    assert!(report.overall > 0.8, "{}", report.overall);
}
