//! Forecasting with an identified `θ`: Monte-Carlo confidence bands and
//! coverage of held-out trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cases::CaseDefinition;
use crate::error::{Error, Result};
use crate::simulator::{fmt_f64, simulate_ensemble, solve_deterministic, TimeGrid, Trajectory};

/// Sub-stream id for truth trajectories, see [`crate::simulator::derive_seed`].
pub const TRUTH_STREAM: u64 = 0x0074_7275_7468;
/// Sub-stream id for the band ensemble, disjoint from the fitting ensemble.
pub const BAND_STREAM: u64 = 0x6261_6e64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    pub n_paths: usize,
    /// Subintervals of the forecast horizon.
    pub n_steps: usize,
    pub level: f64,
    pub truth_paths: usize,
    /// Subintervals of the whole truth simulation, domain start to horizon end.
    pub truth_steps: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            n_steps: 250,
            level: 0.95,
            truth_paths: 20,
            truth_steps: 1000,
        }
    }
}

/// Pointwise empirical quantile band over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub grid: TimeGrid,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
    pub level: f64,
}

impl ConfidenceBand {
    pub fn width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    /// CSV with header `t,lower,upper,mean`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,lower,upper,mean")?;
        for (i, t) in self.grid.nodes().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(self.lower[i]),
                fmt_f64(self.upper[i]),
                fmt_f64(self.mean[i])
            )?;
        }
        Ok(())
    }
}

/// Interpolated order statistic of sorted data (the usual `(n-1)p` rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Simulate the fitted equation from the domain start through `horizon.1`
/// and return the band on `horizon`.
///
/// The step is `(horizon.1 - horizon.0) / n_steps`, so the lead-in from the
/// domain start must be a whole number of steps.
#[allow(clippy::too_many_arguments)]
pub fn predict_band(
    case: &CaseDefinition,
    theta_hat: f64,
    lambda: f64,
    horizon: (f64, f64),
    n_paths: usize,
    n_steps: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceBand> {
    let (h0, h1) = horizon;
    if !(h1 > h0) || h0 < case.t0 {
        return Err(Error::invalid(format!(
            "horizon [{h0}, {h1}] must be non-empty and start at or after the domain start {}",
            case.t0
        )));
    }
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::invalid("band needs at least one step and one path"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let dt = (h1 - h0) / n_steps as f64;
    let lead = (h0 - case.t0) / dt;
    let lead_steps = lead.round();
    if (lead - lead_steps).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "horizon start {h0} is not a whole number of steps ({dt}) from the domain start {}",
            case.t0
        )));
    }
    let lead_steps = lead_steps as usize;
    let full = TimeGrid::new(case.t0, h1, lead_steps + n_steps)?;
    let spec = case.problem_on(theta_hat, lambda, full)?;
    let grid = TimeGrid::new(h0, h1, n_steps)?;

    if lambda == 0.0 {
        let det = solve_deterministic(&spec)?;
        let values = det.values[lead_steps..].to_vec();
        return Ok(ConfidenceBand {
            grid,
            lower: values.clone(),
            upper: values.clone(),
            mean: values,
            level,
        });
    }

    let ens = simulate_ensemble(&spec, n_paths, seed)?;
    let alpha = 1.0 - level;
    let mut lower = Vec::with_capacity(n_steps + 1);
    let mut upper = Vec::with_capacity(n_steps + 1);
    let mut column = vec![0.0; n_paths];
    for j in lead_steps..=lead_steps + n_steps {
        for (c, p) in column.iter_mut().zip(&ens.paths) {
            *c = p.values[j];
        }
        column.sort_by(f64::total_cmp);
        lower.push(quantile(&column, alpha / 2.0));
        upper.push(quantile(&column, 1.0 - alpha / 2.0));
    }
    Ok(ConfidenceBand {
        grid,
        lower,
        upper,
        mean: ens.mean.values[lead_steps..].to_vec(),
        level,
    })
}

/// Trajectories of the true equation (`θ = true_theta`) from the domain start
/// through `t_end`, on `n_steps` subintervals.
pub fn truth_trajectories(
    case: &CaseDefinition,
    lambda: f64,
    t_end: f64,
    count: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let spec = case.problem_on(case.true_theta, lambda, TimeGrid::new(case.t0, t_end, n_steps)?)?;
    Ok(simulate_ensemble(&spec, count, seed)?.paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trajectories: usize,
    /// Fraction of band nodes inside the band, per trajectory.
    pub fractions: Vec<f64>,
    pub overall: f64,
    pub level: f64,
    /// `overall >= level`.
    pub passed: bool,
    /// Every node of every trajectory inside the band.
    pub all_inside: bool,
}

impl CoverageReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Compare `truth` against `band` node by node, interpolating linearly.
/// Band nodes outside a trajectory's span are skipped.
pub fn coverage_check(band: &ConfidenceBand, truth: &[Trajectory]) -> Result<CoverageReport> {
    if truth.is_empty() {
        return Err(Error::invalid("no truth trajectories to check"));
    }
    let mut fractions = Vec::with_capacity(truth.len());
    let (mut inside_total, mut checked_total) = (0usize, 0usize);
    for (k, tr) in truth.iter().enumerate() {
        let (mut inside, mut checked) = (0usize, 0usize);
        for (i, &t) in band.grid.nodes().iter().enumerate() {
            let Some(x) = tr.interpolate(t) else { continue };
            checked += 1;
            if x >= band.lower[i] && x <= band.upper[i] {
                inside += 1;
            }
        }
        if checked == 0 {
            return Err(Error::invalid(format!(
                "truth trajectory {k} does not overlap the band horizon"
            )));
        }
        fractions.push(inside as f64 / checked as f64);
        inside_total += inside;
        checked_total += checked;
    }
    let overall = inside_total as f64 / checked_total as f64;
    Ok(CoverageReport {
        trajectories: truth.len(),
        all_inside: inside_total == checked_total,
        fractions,
        overall,
        level: band.level,
        passed: overall >= band.level,
    })
}
