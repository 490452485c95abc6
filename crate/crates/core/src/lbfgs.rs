//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Scale of the very first trial step; later line searches start at 1.
    pub initial_step: f64,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Stop once `max |g_i|` falls to this value.
    pub gradient_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_step: 0.01,
            history: 100,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            gradient_tolerance: 1e-9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.initial_step > 0.0
            && self.history > 0
            && self.max_line_search > 0
            && self.gradient_tolerance > 0.0
            && self.c1 > 0.0
            && self.c1 < self.c2
            && self.c2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    LineSearchFailure,
}

/// A differentiable function being minimized.
pub trait Objective {
    /// Value and gradient at `x`.
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Called after every accepted step with the new point and its value.
    /// Returning a new `(value, gradient)` signals that the objective itself
    /// changed (e.g. reweighted); the optimizer continues from those.
    fn end_iteration(&mut self, _x: &[f64], _value: f64) -> Result<Option<(f64, Vec<f64>)>> {
        Ok(None)
    }
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Value after each iteration, under that iteration's objective.
    pub values: Vec<f64>,
    /// Value at the start of each iteration, under the same objective as `values`.
    pub start_values: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Curvature pair `(s, y, 1/yᵀs)`.
#[derive(Debug, Clone)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    rho: f64,
}

impl CurvaturePair {
    /// `None` when `sᵀy ≤ 1e-10 ‖s‖‖y‖`.
    pub fn new(s: Vec<f64>, y: Vec<f64>) -> Option<Self> {
        let sy = dot(&s, &y);
        if sy <= 1e-10 * norm(&s) * norm(&y) {
            return None;
        }
        Some(Self { s, y, rho: 1.0 / sy })
    }
}

/// Two-loop recursion: returns `H g` for the inverse-Hessian approximation
/// built from `pairs` (oldest first) on top of `gamma * I`.
pub fn two_loop(g: &[f64], pairs: &[CurvaturePair], gamma: f64) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (i, p) in pairs.iter().enumerate().rev() {
        alpha[i] = p.rho * dot(&p.s, &q);
        for (qj, yj) in q.iter_mut().zip(&p.y) {
            *qj -= alpha[i] * yj;
        }
    }
    for qj in q.iter_mut() {
        *qj *= gamma;
    }
    for (i, p) in pairs.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        for (qj, sj) in q.iter_mut().zip(&p.s) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q
}

/// Cubic interpolation minimizer of two points with derivatives, clamped to `bounds`.
fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: (f64, f64),
) -> f64 {
    let (lo, hi) = bounds;
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2sq = d1 * d1 - g1 * g2;
    if d2sq >= 0.0 {
        let d2 = d2sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Trial {
    t: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

struct LineSearch<'a, O: Objective> {
    obj: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dg0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evals: usize,
}

impl<O: Objective> LineSearch<'_, O> {
    fn eval(&mut self, t: f64) -> Result<Option<Trial>> {
        self.evals += 1;
        let xt: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + t * d).collect();
        let (f, g) = match self.obj.evaluate(&xt) {
            Ok(fg) => fg,
            Err(Error::NonFinite { .. } | Error::NumericalBlowup { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let dg = dot(&g, self.d);
        Ok(Some(Trial { t, f, g, dg }))
    }

    fn armijo(&self, tr: &Trial) -> bool {
        tr.f <= self.f0 + self.c1 * tr.t * self.dg0
    }

    fn curvature(&self, tr: &Trial) -> bool {
        tr.dg.abs() <= -self.c2 * self.dg0
    }

    /// Hager-Zhang approximate Wolfe: near a minimum the change in `f` is lost
    /// to roundoff, so sufficient decrease is judged from the slope instead,
    /// allowing `f` to rise by no more than a few ulps.
    fn approx_wolfe(&self, tr: &Trial) -> bool {
        tr.f <= self.f0 + 10.0 * f64::EPSILON * self.f0.abs()
            && tr.dg <= (2.0 * self.c1 - 1.0) * self.dg0 && self.curvature(tr)
    }

    /// Best step found, if any point with sufficient decrease was seen.
    fn run(mut self, t_init: f64) -> Result<(Option<Trial>, usize)> {
        let origin = Trial {
            t: 0.0,
            f: self.f0,
            g: Vec::new(),
            dg: self.dg0,
        };
        let mut prev = origin;
        let mut t = t_init;
        let mut first = true;
        while self.evals < self.budget {
            let Some(cur) = self.eval(t)? else {
                // non-finite: back off towards the last good point
                t = prev.t + 0.5 * (t - prev.t);
                continue;
            };
            if !self.armijo(&cur) && self.approx_wolfe(&cur) {
                return Ok((Some(cur), self.evals));
            }
            if !self.armijo(&cur) || (!first && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Ok((Some(cur), self.evals));
            }
            if cur.dg >= 0.0 {
                return self.zoom(cur, prev);
            }
            let lo = cur.t + 0.01 * (cur.t - prev.t);
            let hi = cur.t * 10.0;
            t = cubic_interpolate((prev.t, prev.f, prev.dg), (cur.t, cur.f, cur.dg), (lo, hi));
            prev = cur;
            first = false;
        }
        let best = (prev.t > 0.0).then_some(prev);
        Ok((best, self.evals))
    }

    /// `lo` satisfies sufficient decrease and has the lowest value seen;
    /// the minimizer lies between `lo` and `hi`.
    fn zoom(mut self, mut lo: Trial, mut hi: Trial) -> Result<(Option<Trial>, usize)> {
        while self.evals < self.budget {
            let (a, b) = if lo.t < hi.t { (lo.t, hi.t) } else { (hi.t, lo.t) };
            let width = b - a;
            if width <= f64::EPSILON * b.abs().max(1.0) {
                break;
            }
            let t = if hi.f.is_finite() {
                cubic_interpolate(
                    (lo.t, lo.f, lo.dg),
                    (hi.t, hi.f, hi.dg),
                    (a + 0.1 * width, b - 0.1 * width),
                )
            } else {
                0.5 * (a + b)
            };
            let Some(cur) = self.eval(t)? else {
                hi = Trial {
                    t,
                    f: f64::INFINITY,
                    g: Vec::new(),
                    dg: f64::NAN,
                };
                continue;
            };
            if !self.armijo(&cur) && self.approx_wolfe(&cur) {
                return Ok((Some(cur), self.evals));
            }
            if !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Ok((Some(cur), self.evals));
                }
                if cur.dg * (hi.t - lo.t) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        let best = (lo.t > 0.0).then_some(lo);
        Ok((best, self.evals))
    }
}

/// Minimize `objective` from `start`.
pub fn minimize<O: Objective>(
    objective: &mut O,
    start: &[f64],
    config: &OptimizerConfig,
) -> Result<MinimizeResult> {
    config.validate()?;
    let mut x = start.to_vec();
    let (mut f, mut g) = objective.evaluate(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let mut evaluations = 1;
    let mut pairs: VecDeque<CurvaturePair> = VecDeque::with_capacity(config.history);
    let mut values = Vec::new();
    let mut start_values = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iter in 0..config.max_iterations {
        if max_abs(&g) <= config.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        let gamma = pairs
            .back()
            .map_or(1.0, |p| dot(&p.s, &p.y) / dot(&p.y, &p.y));
        let mut d: Vec<f64> = two_loop(&g, pairs.make_contiguous(), gamma)
            .into_iter()
            .map(|v| -v)
            .collect();
        let mut dg = dot(&g, &d);
        if !(dg < 0.0) || !dg.is_finite() {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            dg = -dot(&g, &g);
        }
        let t0 = if iter == 0 {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            config.initial_step * (1.0f64).min(1.0 / l1)
        } else {
            1.0
        };

        let search = LineSearch {
            obj: &mut *objective,
            x: &x,
            d: &d,
            f0: f,
            dg0: dg,
            c1: config.c1,
            c2: config.c2,
            budget: config.max_line_search,
            evals: 0,
        };
        let (accepted, used) = search.run(t0)?;
        evaluations += used;
        let Some(step) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };

        let x_new: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + step.t * d).collect();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        if let Some(pair) = CurvaturePair::new(s, y) {
            if pairs.len() == config.history {
                pairs.pop_front();
            }
            pairs.push_back(pair);
        }
        start_values.push(f);
        values.push(step.f);
        x = x_new;
        f = step.f;
        g = step.g;
        if let Some((f2, g2)) = objective.end_iteration(&x, f)? {
            evaluations += 1;
            f = f2;
            g = g2;
        }
    }

    Ok(MinimizeResult {
        x,
        value: f,
        iterations: values.len(),
        values,
        start_values,
        evaluations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_1d() {
        let mut f = |x: &[f64]| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]);
        let r = minimize(&mut f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8, "{r:?}");
        assert!(r.iterations <= 5, "{} iterations", r.iterations);
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            let gb = 200.0 * (b - a * a);
            (v, vec![ga, gb])
        };
        let r = minimize(&mut f, &[-1.2, 1.0], &OptimizerConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
        assert!(r.iterations <= 200);
        for w in r.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn skips_bad_curvature_pairs() {
        assert!(CurvaturePair::new(vec![1.0, 0.0], vec![-1.0, 0.0]).is_none());
        assert!(CurvaturePair::new(vec![1.0, 0.0], vec![0.0, 1.0]).is_none());
        assert!(CurvaturePair::new(vec![1.0, 0.0], vec![2.0, 0.0]).is_some());
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: infinite for x >= 1; large first steps overshoot into it
        let mut f = |x: &[f64]| {
            if x[0] >= 1.0 {
                return (f64::INFINITY, vec![f64::NAN]);
            }
            let v = -(1.0 - x[0]).ln() + 0.5 * x[0] * x[0] - 5.0 * x[0];
            (v, vec![1.0 / (1.0 - x[0]) + x[0] - 5.0])
        };
        let cfg = OptimizerConfig {
            initial_step: 100.0,
            ..Default::default()
        };
        let r = minimize(&mut f, &[0.0], &cfg).unwrap();
        assert!(r.value.is_finite());
        assert!(r.x[0] < 1.0);
        // minimizer of -ln(1-x) + x²/2 - 5x on x<1: root of x² - 6x + 4 = 0 below 1
        let want = 3.0 - 5.0f64.sqrt();
        assert!((r.x[0] - want).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn invalid_config_rejected() {
        let mut f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        let cfg = OptimizerConfig {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(&mut f, &[1.0], &cfg).is_err());
    }

    #[test]
    fn nan_at_start_is_an_error() {
        let mut f = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(minimize(&mut f, &[1.0], &OptimizerConfig::default()).is_err());
    }
}
