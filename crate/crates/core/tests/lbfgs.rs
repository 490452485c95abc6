mod common;

use common::{dot, matvec, solve, spd, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volterra_ident::lbfgs::{minimize, two_loop, CurvaturePair, OptimizerConfig};

#[test]
fn convex_quadratic_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = 30;
    let a = spd(n, 100.0, &mut rng);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut f = |x: &[f64]| {
        let ax = matvec(&a, x);
        let g: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        (0.5 * dot(x, &ax) - dot(&b, x), g)
    };
    let config = OptimizerConfig {
        max_iterations: 60,
        ..OptimizerConfig::default()
    };
    let r = minimize(&mut f, &vec![0.0; n], &config).unwrap();
    let grad = f(&r.x).1;
    assert!(dot(&grad, &grad).sqrt() <= 1e-8, "gradient norm {}", dot(&grad, &grad).sqrt());
    assert!(r.iterations <= 60);
    let direct = solve(&a, &b);
    for (x, y) in r.x.iter().zip(&direct) {
        assert!((x - y).abs() <= 1e-6);
    }
    // Non-increasing up to roundoff in evaluating f near its minimum.
    for w in r.values.windows(2) {
        assert!(w[1] <= w[0] + 1e-14 * w[0].abs());
    }
}

#[test]
fn full_history_gives_the_newton_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 5;
    for _ in 0..10 {
        let a = spd(n, 50.0, &mut rng);
        // A-conjugate steps, curvature y = A s.
        let mut steps: Matrix = Vec::new();
        while steps.len() < n {
            let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for p in &steps {
                let ap = matvec(&a, p);
                let c = dot(&s, &ap) / dot(p, &ap);
                s.iter_mut().zip(p).for_each(|(x, y)| *x -= c * y);
            }
            steps.push(s);
        }
        let pairs: Vec<CurvaturePair> = steps
            .iter()
            .map(|s| CurvaturePair::new(s.clone(), matvec(&a, s)).unwrap())
            .collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let newton = solve(&a, &g);
        let gamma = rng.random_range(0.1..2.0);
        let d = two_loop(&g, &pairs, gamma);
        for (x, y) in d.iter().zip(&newton) {
            assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn minimize_is_deterministic() {
    let mut f = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        (v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
    };
    let c = OptimizerConfig::default();
    let r1 = minimize(&mut f, &[-1.2, 1.0], &c).unwrap();
    let r2 = minimize(&mut f, &[-1.2, 1.0], &c).unwrap();
    assert_eq!(r1, r2);
    assert!((r1.x[0] - 1.0).abs() < 1e-6 && (r1.x[1] - 1.0).abs() < 1e-6);
}
