//! Residual terms and the adaptively weighted training loss.
//!
//! Four mean-squared residuals are combined:
//!
//! * `mse_m`: network primary output against the measurements,
//! * `mse_g`: the governing equation `u = f + sign·θ·v` (zero-mean noise dropped),
//! * `mse_o`: the output condition linking `v` to `u`,
//! * `mse_i`: the initial condition `v(t_ic) = 0`.
//!
//! Collocation points coincide with the measurement times.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph};
use crate::cases::{CaseDefinition, OutputCondition};
use crate::error::{Error, Result};
use crate::network::{NetworkOutput, NetworkVars, ParameterSet};
use crate::simulator::fmt_f64;

/// Anything that can produce differentiable `(u, v)` at a time variable, plus `θ`.
///
/// Implemented by the network; tests also implement it with closed-form functions.
pub trait Approximator {
    fn outputs(&self, graph: &mut Graph, t: Expr) -> NetworkOutput<Expr>;
    fn theta(&self) -> Expr;
}

impl Approximator for NetworkVars {
    fn outputs(&self, graph: &mut Graph, t: Expr) -> NetworkOutput<Expr> {
        self.forward(graph, t)
    }

    fn theta(&self) -> Expr {
        self.theta
    }
}

/// Measurement times and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    points: Vec<(f64, f64)>,
}

impl MeasurementSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("measurement set needs at least two points"));
        }
        if points.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
            return Err(Error::invalid("measurement set contains non-finite values"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("measurement times must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// Check that every time lies in the case domain.
    pub fn check_domain(&self, case: &CaseDefinition) -> Result<()> {
        let tol = 1e-9 * (1.0 + case.t_end.abs());
        match self
            .points
            .iter()
            .find(|(t, _)| *t < case.t0 - tol || *t > case.t_end + tol)
        {
            Some((t, _)) => Err(Error::invalid(format!(
                "measurement time {t} outside [{}, {}]",
                case.t0, case.t_end
            ))),
            None => Ok(()),
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `t,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u")?;
        for (t, u) in &self.points {
            writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*u))?;
        }
        Ok(())
    }

    /// Parse the format written by [`MeasurementSet::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "t,u" {
                    return Err(Error::invalid(format!("expected header 't,u', found '{line}'")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("line {}: bad number '{s}'", i + 1)))
            };
            let (t, u) = line
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("line {}: expected two columns", i + 1)))?;
            points.push((num(t)?, num(u)?));
        }
        Self::new(points)
    }
}

pub const WEIGHT_FLOOR: f64 = 1e-30;
pub const WEIGHT_CAP: f64 = 1e6;

/// Loss-term weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub w_m: f64,
    pub w_g: f64,
    pub w_i: f64,
    pub w_o: f64,
    /// Set when a residual fell below [`WEIGHT_FLOOR`] and the weights were clamped.
    pub clamped: bool,
}

impl Default for WeightState {
    fn default() -> Self {
        Self {
            w_m: 1.0,
            w_g: 1.0,
            w_i: 1.0,
            w_o: 1.0,
            clamped: false,
        }
    }
}

/// Ratio weights: the smaller of `mse_g`, `mse_o` gets weight 1, the larger
/// is boosted by the ratio. `w_m` is 1 and `w_i` follows `w_o`.
pub fn adaptive_weights(mse_g: f64, mse_o: f64) -> WeightState {
    let lo = mse_g.min(mse_o);
    if lo > WEIGHT_FLOOR {
        let w_o = mse_o / lo;
        return WeightState {
            w_m: 1.0,
            w_g: mse_g / lo,
            w_i: w_o,
            w_o,
            clamped: false,
        };
    }
    let w = |x: f64| (x.max(0.0) / WEIGHT_FLOOR).clamp(1.0, WEIGHT_CAP);
    let w_o = w(mse_o);
    WeightState {
        w_m: 1.0,
        w_g: w(mse_g),
        w_i: w_o,
        w_o,
        clamped: true,
    }
}

/// Knobs that the method leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    /// Fixed `w_i` instead of following `w_o`.
    pub initial_weight: Option<f64>,
    /// Also penalize `v'(t_ic) - k(t_ic, t_ic) u(t_ic)`, which pins the free slope
    /// left by a second-order output condition.
    pub initial_slope: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            initial_weight: None,
            initial_slope: true,
        }
    }
}

impl LossOptions {
    pub fn apply(&self, mut w: WeightState) -> WeightState {
        if let Some(wi) = self.initial_weight {
            w.w_i = wi;
        }
        w
    }
}

/// Component values, weights and weighted total for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_m: f64,
    pub mse_g: f64,
    pub mse_o: f64,
    pub mse_i: f64,
    pub weights: WeightState,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse_m: f64, mse_g: f64, mse_o: f64, mse_i: f64, weights: WeightState) -> Self {
        let total = weights.w_m * mse_m
            + weights.w_g * mse_g
            + weights.w_i * mse_i
            + weights.w_o * mse_o;
        Self {
            mse_m,
            mse_g,
            mse_o,
            mse_i,
            weights,
            total,
        }
    }

    pub fn reweighted(&self, weights: WeightState) -> Self {
        Self::new(self.mse_m, self.mse_g, self.mse_o, self.mse_i, weights)
    }
}

/// Loss history CSV: `iter,mse_m,mse_g,mse_o,mse_i,w_g,w_o,total,theta`.
pub fn write_history_csv<W: Write>(
    mut w: W,
    history: &[LossBreakdown],
    thetas: &[f64],
) -> Result<()> {
    writeln!(w, "iter,mse_m,mse_g,mse_o,mse_i,w_g,w_o,total,theta")?;
    for (i, (b, th)) in history.iter().zip(thetas).enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            i + 1,
            fmt_f64(b.mse_m),
            fmt_f64(b.mse_g),
            fmt_f64(b.mse_o),
            fmt_f64(b.mse_i),
            fmt_f64(b.weights.w_g),
            fmt_f64(b.weights.w_o),
            fmt_f64(b.total),
            fmt_f64(*th)
        )?;
    }
    Ok(())
}

/// Network outputs and the input derivatives needed at one collocation point.
struct PointOutputs {
    t: f64,
    u: Expr,
    v: Expr,
    dv: Option<Expr>,
    d2v: Option<Expr>,
}

fn derivative_order(cond: OutputCondition) -> u32 {
    match cond {
        OutputCondition::SecondDerivative => 2,
        _ => 1,
    }
}

fn point_outputs<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    t: f64,
    order: u32,
) -> Result<PointOutputs> {
    let tv = graph.variable(t);
    let out = model.outputs(graph, tv);
    let (dv, d2v) = match order {
        0 => (None, None),
        1 => (Some(graph.input_derivative(out.v, tv, 1)?), None),
        _ => {
            let dv = graph.input_derivative(out.v, tv, 1)?;
            let d2v = graph.input_derivative(dv, tv, 1)?;
            (Some(dv), Some(d2v))
        }
    };
    Ok(PointOutputs {
        t,
        u: out.u,
        v: out.v,
        dv,
        d2v,
    })
}

fn sum_squares(graph: &mut Graph, residuals: &[Expr]) -> Expr {
    let sq: Vec<Expr> = residuals.iter().map(|&r| graph.powi(r, 2)).collect();
    graph.sum(sq)
}

fn measurement_residual(graph: &mut Graph, p: &PointOutputs, u_m: f64) -> Expr {
    let c = graph.constant(u_m);
    graph.sub(p.u, c)
}

/// `u - f(t) - sign·θ·v`
fn governing_residual<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    p: &PointOutputs,
) -> Expr {
    let f = graph.constant((case.forcing)(p.t));
    let tv = graph.mul(model.theta(), p.v);
    let drift = graph.scale(case.drift_sign, tv);
    let a = graph.sub(p.u, f);
    graph.sub(a, drift)
}

/// Output-condition residuals for every point; `points` must be in time order
/// and cover the whole collocation set for the generic condition.
fn output_residuals(
    graph: &mut Graph,
    case: &CaseDefinition,
    points: &[PointOutputs],
) -> Result<Vec<Expr>> {
    let need = |e: Option<Expr>| e.expect("derivative requested for this condition");
    match case.output_condition {
        OutputCondition::SecondDerivative => Ok(points
            .iter()
            .map(|p| graph.sub(need(p.d2v), p.u))
            .collect()),
        OutputCondition::ExponentialShift => Ok(points
            .iter()
            .map(|p| {
                let eu = graph.scale((2.0 * p.t).exp(), p.u);
                let a = graph.sub(need(p.dv), eu);
                graph.sub(a, p.v)
            })
            .collect()),
        OutputCondition::ScaledLinear => Ok(points
            .iter()
            .map(|p| {
                let tdv = graph.scale(p.t, need(p.dv));
                let t3u = graph.scale(p.t.powi(3), p.u);
                let a = graph.sub(tdv, t3u);
                graph.sub(a, p.v)
            })
            .collect()),
        OutputCondition::Generic => {
            let kdt = case.kernel_dt.clone().ok_or_else(|| {
                Error::invalid("generic output condition requires the kernel's t-derivative")
            })?;
            let mut out = Vec::with_capacity(points.len());
            for (i, p) in points.iter().enumerate() {
                let diag = graph.scale((case.kernel)(p.t, p.t), p.u);
                let terms: Vec<Expr> = (0..i)
                    .map(|j| {
                        let w = kdt(p.t, points[j].t) * (points[j + 1].t - points[j].t);
                        graph.scale(w, points[j].u)
                    })
                    .collect();
                let q = graph.sum(terms);
                let a = graph.sub(need(p.dv), diag);
                out.push(graph.sub(a, q));
            }
            Ok(out)
        }
    }
}

fn initial_residual<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    opts: &LossOptions,
) -> Result<Expr> {
    let p = point_outputs(graph, model, case.t_ic, u32::from(opts.initial_slope))?;
    let v2 = graph.powi(p.v, 2);
    Ok(match p.dv {
        Some(dv) => {
            // Differentiating v(t) = ∫ k(t,s) X(s) ds at the lower limit leaves k(t0,t0) X(t0).
            let ku = graph.scale((case.kernel)(case.t_ic, case.t_ic), p.u);
            let r = graph.sub(dv, ku);
            let d2 = graph.powi(r, 2);
            graph.add(v2, d2)
        }
        None => v2,
    })
}

fn mean(graph: &mut Graph, sum: Expr, n: usize) -> Expr {
    graph.scale(1.0 / n as f64, sum)
}

/// `(1/N) Σ |u(t_i) - u_m(t_i)|²`
pub fn mse_measurement<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    data: &MeasurementSet,
) -> Result<Expr> {
    let mut res = Vec::with_capacity(data.len());
    for &(t, u_m) in data.points() {
        let p = point_outputs(graph, model, t, 0)?;
        res.push(measurement_residual(graph, &p, u_m));
    }
    let s = sum_squares(graph, &res);
    Ok(mean(graph, s, data.len()))
}

/// `(1/N) Σ |u(t_i) - [f(t_i) + sign·θ·v(t_i)]|²`
pub fn mse_governing<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    times: &[f64],
) -> Result<Expr> {
    let mut res = Vec::with_capacity(times.len());
    for &t in times {
        let p = point_outputs(graph, model, t, 0)?;
        res.push(governing_residual(graph, model, case, &p));
    }
    let s = sum_squares(graph, &res);
    Ok(mean(graph, s, times.len()))
}

/// Mean squared output-condition residual over `times` (increasing).
pub fn mse_output_condition<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    times: &[f64],
) -> Result<Expr> {
    if case.output_condition == OutputCondition::Generic && case.kernel_dt.is_none() {
        return Err(Error::invalid(
            "generic output condition requires the kernel's t-derivative",
        ));
    }
    let order = derivative_order(case.output_condition);
    let points = times
        .iter()
        .map(|&t| point_outputs(graph, model, t, order))
        .collect::<Result<Vec<_>>>()?;
    let res = output_residuals(graph, case, &points)?;
    let s = sum_squares(graph, &res);
    Ok(mean(graph, s, times.len()))
}

/// `|v(t_ic)|²`
pub fn mse_initial<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
) -> Result<Expr> {
    let opts = LossOptions {
        initial_slope: false,
        ..LossOptions::default()
    };
    initial_residual(graph, model, case, &opts)
}

/// Unnormalized squared-residual sums over a subset of collocation points.
struct PartialSums {
    sq_m: Expr,
    sq_g: Expr,
    sq_o: Expr,
    initial: Option<Expr>,
}

fn partial_sums<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    points: &[(f64, f64)],
    with_initial: bool,
    opts: &LossOptions,
) -> Result<PartialSums> {
    let order = derivative_order(case.output_condition);
    let outs = points
        .iter()
        .map(|&(t, _)| point_outputs(graph, model, t, order))
        .collect::<Result<Vec<_>>>()?;
    let rm: Vec<Expr> = outs
        .iter()
        .zip(points)
        .map(|(p, &(_, u_m))| measurement_residual(graph, p, u_m))
        .collect();
    let rg: Vec<Expr> = outs
        .iter()
        .map(|p| governing_residual(graph, model, case, p))
        .collect();
    let ro = output_residuals(graph, case, &outs)?;
    let sq_m = sum_squares(graph, &rm);
    let sq_g = sum_squares(graph, &rg);
    let sq_o = sum_squares(graph, &ro);
    let initial = if with_initial {
        Some(initial_residual(graph, model, case, opts)?)
    } else {
        None
    };
    Ok(PartialSums {
        sq_m,
        sq_g,
        sq_o,
        initial,
    })
}

fn weighted(graph: &mut Graph, sums: &PartialSums, n: usize, w: &WeightState) -> Expr {
    let k = 1.0 / n as f64;
    let m = graph.scale(w.w_m * k, sums.sq_m);
    let g = graph.scale(w.w_g * k, sums.sq_g);
    let o = graph.scale(w.w_o * k, sums.sq_o);
    let mut total = graph.sum([m, g, o]);
    if let Some(i) = sums.initial {
        let wi = graph.scale(w.w_i, i);
        total = graph.add(total, wi);
    }
    total
}

/// Weighted total loss as a single differentiable expression.
///
/// `weights` are treated as constants. The returned breakdown holds the
/// component values at the current variable bindings.
pub fn total_loss<A: Approximator>(
    graph: &mut Graph,
    model: &A,
    case: &CaseDefinition,
    data: &MeasurementSet,
    weights: WeightState,
    opts: &LossOptions,
) -> Result<(Expr, LossBreakdown)> {
    let sums = partial_sums(graph, model, case, data.points(), true, opts)?;
    let total = weighted(graph, &sums, data.len(), &weights);
    graph.check_finite(total)?;
    let n = data.len() as f64;
    let breakdown = LossBreakdown::new(
        graph.value(sums.sq_m) / n,
        graph.value(sums.sq_g) / n,
        graph.value(sums.sq_o) / n,
        graph.value(sums.initial.expect("initial term requested")),
        weights,
    );
    Ok((total, breakdown))
}

/// Total loss and its gradient over the flattened parameters.
///
/// The collocation points are split into independent graphs (one per point,
/// or one overall for the generic condition, whose quadrature couples points)
/// which are evaluated in parallel and reduced in point order, so the result
/// does not depend on the thread count.
pub fn loss_and_gradient(
    params: &ParameterSet,
    case: &CaseDefinition,
    data: &MeasurementSet,
    weights: WeightState,
    opts: &LossOptions,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let pts = data.points();
    let chunks: Vec<&[(f64, f64)]> = if case.output_condition == OutputCondition::Generic {
        vec![pts]
    } else {
        pts.chunks(1).collect()
    };
    let n = data.len();
    let parts = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, chunk)| {
            let mut graph = Graph::with_capacity(64 * 1024);
            let vars = params.register(&mut graph)?;
            let sums = partial_sums(&mut graph, &vars, case, chunk, ci == 0, opts)?;
            let total = weighted(&mut graph, &sums, n, &weights);
            graph.check_finite(total)?;
            let grad = graph.gradient(total, vars.flat());
            let comps = [
                graph.value(sums.sq_m),
                graph.value(sums.sq_g),
                graph.value(sums.sq_o),
                sums.initial.map_or(0.0, |e| graph.value(e)),
            ];
            Ok((comps, grad))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut comps = [0.0; 4];
    let mut grad = vec![0.0; params.config.parameter_count()];
    for (c, g) in &parts {
        for k in 0..4 {
            comps[k] += c[k];
        }
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let nf = n as f64;
    let breakdown = LossBreakdown::new(
        comps[0] / nf,
        comps[1] / nf,
        comps[2] / nf,
        comps[3],
        weights,
    );
    if !breakdown.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            node: 0,
            kind: "loss",
        });
    }
    Ok((breakdown, grad))
}
