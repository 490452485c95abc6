use volterra_ident::cases::{CaseDefinition, CaseName};
use volterra_ident::simulator::{
    ito_term, sample_brownian, simulate_ensemble, solve_deterministic, NoiseMode, TimeGrid,
};

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn brownian_endpoint_moments() {
    let grid = TimeGrid::new(0.0, 3.0, 1000).unwrap();
    let n = 10_000;
    let ends: Vec<f64> = (0..n)
        .map(|s| *sample_brownian(&grid, s).values.last().unwrap())
        .collect();
    let mean = ends.iter().sum::<f64>() / n as f64;
    let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Standard error of the mean is sqrt(3 / n).
    assert!(mean.abs() < 4.0 * (3.0 / n as f64).sqrt(), "mean {mean}");
    assert!((var - 3.0).abs() < 0.3, "variance {var}");
}

#[test]
fn brownian_mean_vanishes_at_every_node() {
    let grid = TimeGrid::new(0.0, 3.0, 100).unwrap();
    let n = 10_000;
    let mut sum = vec![0.0; grid.len()];
    for s in 0..n {
        for (a, b) in sum.iter_mut().zip(&sample_brownian(&grid, s).values) {
            *a += b;
        }
    }
    for (j, t) in grid.nodes().iter().enumerate() {
        let se = (t / n as f64).sqrt();
        assert!((sum[j] / n as f64).abs() <= 4.0 * se + 1e-15, "node {j}");
    }
}

#[test]
fn closed_form_matches_left_point_sum() {
    let grid = TimeGrid::new(0.0, 3.0, 1000).unwrap();
    let seeds = 1000;
    let mut close = 0;
    for s in 0..seeds {
        let path = sample_brownian(&grid, s);
        let left: f64 = path.values.windows(2).map(|w| w[0] * (w[1] - w[0])).sum();
        let closed = *ito_term(&path, NoiseMode::BrownianIntegrand).last().unwrap();
        if (left - closed).abs() < 0.15 {
            close += 1;
        }
    }
    assert!(close as f64 >= 0.95 * seeds as f64, "{close} of {seeds}");
}

#[test]
fn noise_free_reference_values() {
    let c1 = CaseDefinition::builtin(CaseName::Case1).unwrap();
    let x = solve_deterministic(&c1.problem(1.0, 0.0, 1000).unwrap()).unwrap();
    assert!((x.values.last().unwrap() - 42.8567).abs() <= 0.5);

    let c2 = CaseDefinition::builtin(CaseName::Case2).unwrap();
    let x = solve_deterministic(&c2.problem(1.0, 0.0, 1000).unwrap()).unwrap();
    assert!((x.values.last().unwrap() - 5.08822).abs() <= 0.05);
}

#[test]
fn refinement_halves_the_gap() {
    for name in [CaseName::Case1, CaseName::Case2, CaseName::Case3] {
        let c = CaseDefinition::builtin(name).unwrap();
        let solve = |n| solve_deterministic(&c.problem(1.0, 0.0, n).unwrap()).unwrap();
        let (a, b, d) = (solve(1000), solve(2000), solve(4000));
        // Compare on the coarse nodes.
        let b_on_a: Vec<f64> = b.values.iter().step_by(2).copied().collect();
        let d_on_b: Vec<f64> = d.values.iter().step_by(2).copied().collect();
        let coarse = sup_gap(&a.values, &b_on_a);
        let fine = sup_gap(&b.values, &d_on_b);
        assert!(coarse / fine >= 1.8, "{name}: {coarse} / {fine}");
    }
}

#[test]
fn ensemble_mean_within_clt_bound() {
    let c = CaseDefinition::builtin(CaseName::Case1).unwrap();
    let spec = c.problem(1.0, 1.0, 1000).unwrap();
    let det = solve_deterministic(&spec).unwrap();
    let bound = 3.0 * 3.0f64.sqrt() / 10.0;
    for master in 0..20 {
        let ens = simulate_ensemble(&spec, 100, master).unwrap();
        let gap = sup_gap(&ens.mean.values, &det.values);
        assert!(gap < bound, "seed {master}: {gap}");
    }
}

#[test]
fn ensembles_are_reproducible() {
    let c = CaseDefinition::builtin(CaseName::Case2).unwrap();
    let spec = c.problem(1.0, 1.0, 200).unwrap();
    let a = simulate_ensemble(&spec, 16, 7).unwrap();
    let b = simulate_ensemble(&spec, 16, 7).unwrap();
    assert_eq!(a, b);
    let single = simulate_ensemble(&spec, 1, 7).unwrap();
    assert_eq!(single.mean, single.paths[0]);
    assert_eq!(single.paths[0], a.paths[0]);
}

#[test]
fn noise_free_ensemble_is_deterministic() {
    let c = CaseDefinition::builtin(CaseName::Case3).unwrap();
    let spec = c.problem(1.0, 0.0, 300).unwrap();
    let det = solve_deterministic(&spec).unwrap();
    let ens = simulate_ensemble(&spec, 5, 3).unwrap();
    for p in &ens.paths {
        assert_eq!(p.values, det.values);
    }
    assert!(sup_gap(&ens.mean.values, &det.values) < 1e-12);
}
