//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use volterra_ident::autodiff::{Expr, Graph};
use volterra_ident::cases::{CaseDefinition, CaseName};
use volterra_ident::loss::{Approximator, MeasurementSet};
use volterra_ident::network::NetworkOutput;
use volterra_ident::simulator::{solve_deterministic, subsample_measurements};

/// Hard-coded analytic solution and drift integral of a built-in case.
pub struct Exact {
    pub case: CaseName,
    pub theta: Expr,
}

impl Approximator for Exact {
    fn outputs(&self, g: &mut Graph, t: Expr) -> NetworkOutput<Expr> {
        match self.case {
            CaseName::Case1 => {
                // u = 2e^t - 2cos t + 5 sin t,  v = 2e^t + 3t - 4 + 2cos t - 5 sin t
                let e = g.exp(t);
                let c = g.cos(t);
                let s = g.sin(t);
                let e2 = g.scale(2.0, e);
                let c2 = g.scale(2.0, c);
                let s5 = g.scale(5.0, s);
                let a = g.sub(e2, c2);
                let u = g.add(a, s5);
                let t3 = g.scale(3.0, t);
                let four = g.constant(4.0);
                let b = g.add(e2, t3);
                let b = g.sub(b, four);
                let b = g.add(b, c2);
                let v = g.sub(b, s5);
                NetworkOutput { u, v }
            }
            CaseName::Case2 => {
                // u = e^{-t} + e^{3t},  v = e^t (t + 1) + e^t (e^{4t} - e^{-4}) / 4
                let mt = g.neg(t);
                let em = g.exp(mt);
                let t3 = g.scale(3.0, t);
                let e3 = g.exp(t3);
                let u = g.add(em, e3);
                let et = g.exp(t);
                let one = g.one();
                let tp1 = g.add(t, one);
                let a = g.mul(et, tp1);
                let t4 = g.scale(4.0, t);
                let e4 = g.exp(t4);
                let c = g.constant((-4.0f64).exp());
                let d = g.sub(e4, c);
                let b = g.mul(et, d);
                let b = g.scale(0.25, b);
                let v = g.add(a, b);
                NetworkOutput { u, v }
            }
            CaseName::Case3 => {
                // u = e^{-t²},  v = t e^{-1} / 2 - t e^{-t²} / 2
                let t2 = g.powi(t, 2);
                let mt2 = g.neg(t2);
                let u = g.exp(mt2);
                let a = g.scale(0.5 * (-1.0f64).exp(), t);
                let b = g.mul(t, u);
                let b = g.scale(0.5, b);
                let v = g.sub(a, b);
                NetworkOutput { u, v }
            }
            CaseName::Generic => unreachable!(),
        }
    }

    fn theta(&self) -> Expr {
        self.theta
    }
}

pub fn exact_data(case: &CaseDefinition) -> MeasurementSet {
    let traj = solve_deterministic(&case.problem(1.0, 0.0, 1000).unwrap()).unwrap();
    let x = case.true_solution.clone().unwrap();
    let pts = subsample_measurements(&traj, 50)
        .unwrap()
        .into_iter()
        .map(|(t, _)| (t, x(t)))
        .collect();
    MeasurementSet::new(pts).unwrap()
}

pub type Matrix = Vec<Vec<f64>>;

pub fn matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random orthonormal basis by Gram-Schmidt.
pub fn orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut q: Matrix = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        }
        let nv = dot(&v, &v).sqrt();
        if nv > 1e-8 {
            q.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    q
}

/// SPD matrix with eigenvalues spread over [1, cond].
pub fn spd(n: usize, cond: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let q = orthonormal(n, rng);
    let eig: Vec<f64> = (0..n).map(|i| cond.powf(i as f64 / (n - 1) as f64)).collect();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| q[k][i] * eig[k] * q[k][j]).sum()).collect())
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Matrix = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}
