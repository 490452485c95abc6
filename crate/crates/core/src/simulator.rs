//! Forward simulation of Volterra integral equations perturbed by Gaussian noise.
//!
//! The solution is advanced on a uniform grid with the left-endpoint rule:
//!
//! ```text
//! X_0 = f(t_0)
//! X_i = f(t_i) + sum_{j<i} k(theta, t_i, t_j) X_j dt + lambda * I_i
//! ```
//!
//! where `I_i` is the Itô term at node `i`. Both supported noise modes have
//! closed forms in the Brownian value at the node, so no stochastic quadrature
//! is needed.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar function of time, e.g. the forcing term.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Kernel `(theta, t, s) -> value`.
pub type KernelFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Uniform partition of `[t0, t_end]` into `n` subintervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n: usize,
    dt: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n: usize) -> Result<Self> {
        if !t0.is_finite() || !t_end.is_finite() || t_end <= t0 {
            return Err(Error::invalid(format!(
                "grid span must be positive, got [{t0}, {t_end}]"
            )));
        }
        if n == 0 {
            return Err(Error::invalid("grid needs at least one subinterval"));
        }
        let dt = (t_end - t0) / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * dt).collect();
        nodes[n] = t_end;
        Ok(Self {
            t0,
            t_end,
            n,
            dt,
            nodes,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of subintervals.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Equivalent of [`TimeGrid::new`] under the operation name used throughout the docs.
pub fn make_grid(t0: f64, t_end: f64, n: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, t_end, n)
}

/// A sampled standard Brownian motion started at the first grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Sample a Brownian path with i.i.d. `Normal(0, dt)` increments, `B(t0) = 0`.
pub fn sample_brownian(grid: &TimeGrid, seed: u64) -> BrownianPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = grid.dt().sqrt();
    let mut values = Vec::with_capacity(grid.len());
    let mut b = 0.0;
    values.push(b);
    for _ in 0..grid.n() {
        let z: f64 = StandardNormal.sample(&mut rng);
        b += sd * z;
        values.push(b);
    }
    BrownianPath {
        grid: grid.clone(),
        values,
        seed,
    }
}

/// Form of the stochastic integral driving the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `∫ dB_s = B_t`
    AdditiveBrownian,
    /// `∫ B_s dB_s = B_t²/2 − t/2`
    BrownianIntegrand,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseMode::AdditiveBrownian => write!(f, "additive_brownian"),
            NoiseMode::BrownianIntegrand => write!(f, "brownian_integrand"),
        }
    }
}

/// Itô integral from the path start to every node, in closed form.
///
/// Elapsed time is measured from the grid start, so shifted domains such as
/// `[-1, 1/2]` see `B` started at `t0`.
pub fn ito_term(path: &BrownianPath, mode: NoiseMode) -> Vec<f64> {
    match mode {
        NoiseMode::AdditiveBrownian => path.values.clone(),
        NoiseMode::BrownianIntegrand => {
            let t0 = path.grid.t0();
            path.values
                .iter()
                .zip(path.grid.nodes())
                .map(|(&b, &t)| 0.5 * b * b - 0.5 * (t - t0))
                .collect()
        }
    }
}

/// One instance of the perturbed equation
/// `X(t) = f(t) + ∫ k(θ, t, s) X(s) ds + λ ∫ h dB`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub forcing: ScalarFn,
    pub kernel: KernelFn,
    /// Analytic `∂k/∂t`.
    pub kernel_dt: KernelFn,
    pub theta: f64,
    pub noise_mode: NoiseMode,
    pub lambda: f64,
    pub grid: TimeGrid,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("theta", &self.theta)
            .field("noise_mode", &self.noise_mode)
            .field("lambda", &self.lambda)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn new(
        forcing: ScalarFn,
        kernel: KernelFn,
        kernel_dt: KernelFn,
        theta: f64,
        noise_mode: NoiseMode,
        lambda: f64,
        grid: TimeGrid,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("noise level must be >= 0, got {lambda}")));
        }
        if !theta.is_finite() {
            return Err(Error::invalid("theta must be finite"));
        }
        Ok(Self {
            forcing,
            kernel,
            kernel_dt,
            theta,
            noise_mode,
            lambda,
            grid,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.forcing.clone(),
            self.kernel.clone(),
            self.kernel_dt.clone(),
            self.theta,
            self.noise_mode,
            lambda,
            self.grid.clone(),
        )
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(
            self.forcing.clone(),
            self.kernel.clone(),
            self.kernel_dt.clone(),
            theta,
            self.noise_mode,
            self.lambda,
            self.grid.clone(),
        )
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }
}

/// A solution path on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Trajectory {
    /// Linear interpolation; `None` outside the grid span.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let g = &self.grid;
        let tol = 1e-12 * (1.0 + g.t_end().abs().max(g.t0().abs()));
        if t < g.t0() - tol || t > g.t_end() + tol {
            return None;
        }
        let pos = ((t - g.t0()) / g.dt()).clamp(0.0, g.n() as f64);
        let i = (pos.floor() as usize).min(g.n() - 1);
        let w = pos - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    /// CSV with header `t,x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x")?;
        for (t, x) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*x))?;
        }
        Ok(())
    }
}

/// A set of trajectories on one grid plus their pointwise mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub paths: Vec<Trajectory>,
    pub mean: Trajectory,
}

impl Ensemble {
    /// CSV with header `t,mean,p0,p1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,mean")?;
        for i in 0..self.paths.len() {
            write!(w, ",p{i}")?;
        }
        writeln!(w)?;
        for (j, t) in self.mean.grid.nodes().iter().enumerate() {
            write!(w, "{},{}", fmt_f64(*t), fmt_f64(self.mean.values[j]))?;
            for p in &self.paths {
                write!(w, ",{}", fmt_f64(p.values[j]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Kernel values `k(θ, t_i, t_j) dt` for `j < i`, row-packed, plus forcing values.
/// Shared by every path of an ensemble.
struct FdmTable {
    forcing: Vec<f64>,
    rows: Vec<f64>,
}

impl FdmTable {
    fn build(spec: &ProblemSpec) -> Self {
        let nodes = spec.grid.nodes();
        let dt = spec.grid.dt();
        let forcing = nodes.iter().map(|&t| (spec.forcing)(t)).collect();
        let n = nodes.len();
        let mut rows = Vec::with_capacity(n * (n - 1) / 2);
        for i in 1..n {
            for j in 0..i {
                rows.push((spec.kernel)(spec.theta, nodes[i], nodes[j]) * dt);
            }
        }
        Self { forcing, rows }
    }

    fn solve(&self, grid: &TimeGrid, noise: Option<&[f64]>) -> Result<Trajectory> {
        let n = self.forcing.len();
        let mut x = Vec::with_capacity(n);
        let mut offset = 0;
        for i in 0..n {
            let row = &self.rows[offset..offset + i];
            offset += i;
            let drift: f64 = row.iter().zip(&x).map(|(k, xj)| k * xj).sum();
            let value = self.forcing[i] + drift + noise.map_or(0.0, |e| e[i]);
            if !value.is_finite() {
                return Err(Error::NumericalBlowup {
                    node: i,
                    time: grid.nodes()[i],
                    value,
                });
            }
            x.push(value);
        }
        Ok(Trajectory {
            grid: grid.clone(),
            values: x,
        })
    }
}

fn scaled_noise(spec: &ProblemSpec, path: &BrownianPath) -> Option<Vec<f64>> {
    (spec.lambda != 0.0).then(|| {
        ito_term(path, spec.noise_mode)
            .into_iter()
            .map(|v| spec.lambda * v)
            .collect()
    })
}

/// Solve one path by the left-endpoint finite-difference recursion.
pub fn solve_fdm(spec: &ProblemSpec, path: &BrownianPath) -> Result<Trajectory> {
    if path.grid != spec.grid {
        return Err(Error::invalid("Brownian path grid differs from problem grid"));
    }
    let table = FdmTable::build(spec);
    table.solve(&spec.grid, scaled_noise(spec, path).as_deref())
}

/// Deterministic (λ = 0) solution.
pub fn solve_deterministic(spec: &ProblemSpec) -> Result<Trajectory> {
    FdmTable::build(spec).solve(&spec.grid, None)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` in an ensemble with master seed `master`.
///
/// `splitmix64(master + index * 0x9E3779B97F4A7C15)`: consecutive indices land
/// on decorrelated streams and nearby master seeds do not share paths.
pub fn path_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Derive an independent master seed for a named sub-stream (e.g. truth paths).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Simulate `n_paths` independent trajectories and their pointwise mean.
pub fn simulate_ensemble(spec: &ProblemSpec, n_paths: usize, seed: u64) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::invalid("ensemble needs at least one path"));
    }
    let table = FdmTable::build(spec);
    let paths: Vec<Trajectory> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = sample_brownian(&spec.grid, path_seed(seed, i as u64));
            table
                .solve(&spec.grid, scaled_noise(spec, &path).as_deref())
                .map_err(|e| Error::PathFailed {
                    path: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mean = pointwise_mean(&paths);
    Ok(Ensemble { paths, mean })
}

fn pointwise_mean(paths: &[Trajectory]) -> Trajectory {
    let len = paths[0].values.len();
    let mut sum = vec![0.0; len];
    for p in paths {
        for (s, v) in sum.iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    let k = paths.len() as f64;
    Trajectory {
        grid: paths[0].grid.clone(),
        values: sum.into_iter().map(|s| s / k).collect(),
    }
}

/// `count` evenly spaced samples at indices `round(j * n / (count - 1))`.
pub fn subsample_measurements(traj: &Trajectory, count: usize) -> Result<Vec<(f64, f64)>> {
    if count < 2 {
        return Err(Error::invalid("need at least two measurement points"));
    }
    let n = traj.grid.n();
    if count > n + 1 {
        return Err(Error::invalid(format!(
            "cannot take {count} distinct samples from {} nodes",
            n + 1
        )));
    }
    let nodes = traj.grid.nodes();
    Ok((0..count)
        .map(|j| {
            let idx = ((j * n) as f64 / (count - 1) as f64).round() as usize;
            (nodes[idx], traj.values[idx])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_kernel() -> KernelFn {
        Arc::new(|_, _, _| 0.0)
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(0.0, 3.0, 3).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.dt(), 1.0);
        assert!((make_grid(0.0, 3.0, 1000).unwrap().dt() - 0.003).abs() < 1e-15);
        assert!((make_grid(-1.0, 0.5, 1000).unwrap().dt() - 0.0015).abs() < 1e-15);
        assert!(make_grid(1.0, 1.0, 3).is_err());
        assert!(make_grid(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn brownian_is_deterministic_and_starts_at_zero() {
        let g = make_grid(0.0, 1.0, 50).unwrap();
        let a = sample_brownian(&g, 9);
        let b = sample_brownian(&g, 9);
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a, b);
        assert_ne!(a.values, sample_brownian(&g, 10).values);
    }

    #[test]
    fn ito_closed_forms() {
        let g = make_grid(-1.0, 0.5, 100).unwrap();
        let p = sample_brownian(&g, 3);
        assert_eq!(ito_term(&p, NoiseMode::AdditiveBrownian), p.values);
        let q = ito_term(&p, NoiseMode::BrownianIntegrand);
        assert_eq!(q[0], 0.0);
        for i in 0..p.values.len() {
            let expect = 0.5 * p.values[i] * p.values[i] - 0.5 * (g.nodes()[i] + 1.0);
            assert_eq!(q[i], expect);
        }
    }

    #[test]
    fn zero_kernel_returns_forcing() {
        let g = make_grid(0.0, 2.0, 20).unwrap();
        let spec = ProblemSpec::new(
            Arc::new(|t: f64| t.sin() + 2.0),
            zero_kernel(),
            zero_kernel(),
            1.0,
            NoiseMode::AdditiveBrownian,
            0.0,
            g.clone(),
        )
        .unwrap();
        let x = solve_fdm(&spec, &sample_brownian(&g, 1)).unwrap();
        for (t, v) in g.nodes().iter().zip(&x.values) {
            assert_eq!(*v, t.sin() + 2.0);
        }
    }

    #[test]
    fn blowup_is_reported_with_node() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let spec = ProblemSpec::new(
            Arc::new(|t: f64| if t > 0.45 { f64::INFINITY } else { 1.0 }),
            zero_kernel(),
            zero_kernel(),
            1.0,
            NoiseMode::AdditiveBrownian,
            0.0,
            g,
        )
        .unwrap();
        match solve_deterministic(&spec) {
            Err(Error::NumericalBlowup { node, .. }) => assert_eq!(node, 5),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let r = ProblemSpec::new(
            Arc::new(|_| 0.0),
            zero_kernel(),
            zero_kernel(),
            1.0,
            NoiseMode::AdditiveBrownian,
            -0.1,
            g,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn subsample_examples() {
        let g = make_grid(0.0, 3.0, 1000).unwrap();
        let traj = Trajectory {
            values: g.nodes().to_vec(),
            grid: g,
        };
        let pts = subsample_measurements(&traj, 50).unwrap();
        assert_eq!(pts.len(), 50);
        assert_eq!(pts[0].0, 0.0);
        assert_eq!(pts[49].0, 3.0);
        for w in pts.windows(2) {
            assert!(w[1].0 > w[0].0);
            let steps = ((w[1].0 - w[0].0) / 0.003).round();
            assert!((20.0..=21.0).contains(&steps));
        }
        let ends = subsample_measurements(&traj, 2).unwrap();
        assert_eq!(ends, vec![(0.0, 0.0), (3.0, 3.0)]);
        assert!(subsample_measurements(&traj, 1).is_err());

        let g49 = make_grid(0.0, 1.0, 49).unwrap();
        let short = Trajectory {
            values: vec![0.0; 50],
            grid: g49,
        };
        assert!(subsample_measurements(&short, 50).is_ok());
        let g48 = make_grid(0.0, 1.0, 48).unwrap();
        let shorter = Trajectory {
            values: vec![0.0; 49],
            grid: g48,
        };
        assert!(matches!(
            subsample_measurements(&shorter, 50),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn interpolation() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        let traj = Trajectory {
            values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            grid: g,
        };
        assert_eq!(traj.interpolate(0.375), Some(1.5));
        assert_eq!(traj.interpolate(1.0), Some(4.0));
        assert_eq!(traj.interpolate(1.5), None);
    }

    #[test]
    fn csv_layout() {
        let g = make_grid(0.0, 1.0, 2).unwrap();
        let traj = Trajectory {
            values: vec![1.0, 2.0, 3.0],
            grid: g,
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x");
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0");
        assert_eq!(lines.len(), 4);
    }
}
