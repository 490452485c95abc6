//! End-to-end identification of `θ` for one case.

use serde::{Deserialize, Serialize};

use crate::cases::CaseDefinition;
use crate::error::{Error, Result};
use crate::lbfgs::{minimize, Objective, OptimizerConfig, Termination};
use crate::loss::{adaptive_weights, loss_and_gradient, LossBreakdown, LossOptions, MeasurementSet, WeightState};
use crate::network::{MlpConfig, ParameterSet, ParameterSnapshot};
use crate::simulator::{simulate_ensemble, subsample_measurements, Ensemble};

/// How measurements are produced from simulated trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_paths: usize,
    /// Subintervals of the simulation grid.
    pub n_steps: usize,
    /// Measurement points, evenly subsampled from the ensemble mean.
    pub n_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_paths: 100,
            n_steps: 1000,
            n_points: 50,
        }
    }
}

/// Simulate the true equation and subsample the ensemble mean.
pub fn synthetic_data(
    case: &CaseDefinition,
    lambda: f64,
    data: &DataConfig,
    seed: u64,
) -> Result<(Ensemble, MeasurementSet)> {
    let spec = case.problem(case.true_theta, lambda, data.n_steps)?;
    let ens = simulate_ensemble(&spec, data.n_paths, seed)?;
    let points = MeasurementSet::new(subsample_measurements(&ens.mean, data.n_points)?)?;
    Ok((ens, points))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default)]
    pub network: MlpConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub loss: LossOptions,
    #[serde(default)]
    pub schedule: TrainingSchedule,
}

/// How the iteration budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    /// Leading iterations trained without the governing residual. `θ` only
    /// enters through that residual, so it stays at its initial value while
    /// `u` fits the data and `v` settles onto the output condition; otherwise
    /// the first steps push `θ` along whatever sign the random `v` happens to have.
    pub warmup_iterations: usize,
    /// Set the network's output scale to the root-mean-square of the measurements (at least 1).
    pub scale_outputs: bool,
    /// Refresh the adaptive weights every iteration; when false they stay at 1.
    pub adaptive_weights: bool,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            warmup_iterations: 50,
            scale_outputs: true,
            adaptive_weights: true,
        }
    }
}

/// Weights used during warm-up: everything but the governing residual.
const WARMUP_WEIGHTS: WeightState = WeightState {
    w_m: 1.0,
    w_g: 0.0,
    w_i: 1.0,
    w_o: 1.0,
    clamped: false,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: f64,
    pub initial_theta: f64,
    pub parameters: ParameterSnapshot,
    /// Breakdown at the accepted point of each iteration, under that iteration's weights.
    pub loss_history: Vec<LossBreakdown>,
    /// Weighted total at the start of each iteration, under the same weights
    /// as the matching `loss_history` entry.
    pub start_totals: Vec<f64>,
    pub theta_history: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl FitResult {
    pub fn params(&self) -> Result<ParameterSet> {
        ParameterSet::from_snapshot(&self.parameters)
    }
}

struct FitObjective<'a> {
    case: &'a CaseDefinition,
    data: &'a MeasurementSet,
    config: &'a MlpConfig,
    opts: LossOptions,
    weights: WeightState,
    adaptive: bool,
    // Component values of recent evaluations, to recover the accepted point's breakdown.
    recent: Vec<(Vec<f64>, LossBreakdown)>,
    history: Vec<LossBreakdown>,
    thetas: Vec<f64>,
}

impl FitObjective<'_> {
    fn breakdown_at(&mut self, x: &[f64]) -> Result<LossBreakdown> {
        if let Some((_, b)) = self.recent.iter().rev().find(|(xr, _)| xr == x) {
            return Ok(*b);
        }
        let params = ParameterSet::unflatten(x, self.config)?;
        let (b, _) = loss_and_gradient(&params, self.case, self.data, self.weights, &self.opts)?;
        Ok(b)
    }
}

impl Objective for FitObjective<'_> {
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = ParameterSet::unflatten(x, self.config)?;
        let (b, g) = loss_and_gradient(&params, self.case, self.data, self.weights, &self.opts)?;
        if self.recent.len() >= 32 {
            self.recent.remove(0);
        }
        self.recent.push((x.to_vec(), b));
        Ok((b.total, g))
    }

    fn end_iteration(&mut self, x: &[f64], _value: f64) -> Result<Option<(f64, Vec<f64>)>> {
        let b = self.breakdown_at(x)?;
        self.history.push(b);
        self.thetas.push(*x.last().expect("theta slot"));
        self.recent.clear();

        if !self.adaptive {
            return Ok(None);
        }
        let next = self.opts.apply(adaptive_weights(b.mse_g, b.mse_o));
        if next == self.weights {
            return Ok(None);
        }
        self.weights = next;
        self.evaluate(x).map(Some)
    }
}

/// Train the network and `θ` on `data` for `case`.
///
/// After the warm-up, weights are refreshed from the residuals after every
/// accepted step and held fixed during each line search. The optimizer
/// restarts its curvature history when the warm-up ends, since the objective
/// changes there.
pub fn fit_case(case: &CaseDefinition, data: &MeasurementSet, config: &FitConfig) -> Result<FitResult> {
    data.check_domain(case)?;
    config.optimizer.validate()?;
    let schedule = config.schedule;
    if schedule.warmup_iterations > config.optimizer.max_iterations {
        return Err(Error::invalid(format!(
            "warm-up of {} iterations exceeds the budget of {}",
            schedule.warmup_iterations, config.optimizer.max_iterations
        )));
    }
    let mut network = config.network.clone();
    if schedule.scale_outputs {
        let ms = data.points().iter().map(|&(_, u)| u * u).sum::<f64>() / data.len() as f64;
        network.output_scale = ms.sqrt().max(1.0);
    }
    let init = ParameterSet::init(&network)?;

    let mut objective = FitObjective {
        case,
        data,
        config: &network,
        opts: config.loss,
        weights: WARMUP_WEIGHTS,
        adaptive: false,
        recent: Vec::new(),
        history: Vec::new(),
        thetas: Vec::new(),
    };
    let mut x = init.flatten();
    let mut start_totals = Vec::new();
    let mut evaluations = 0;
    let mut termination = Termination::MaxIterations;
    let phases = [
        (schedule.warmup_iterations, false),
        (config.optimizer.max_iterations - schedule.warmup_iterations, true),
    ];
    for (iterations, main) in phases {
        if iterations == 0 {
            continue;
        }
        if main {
            let params = ParameterSet::unflatten(&x, &network)?;
            let (b, _) = loss_and_gradient(&params, case, data, WeightState::default(), &config.loss)?;
            objective.adaptive = schedule.adaptive_weights;
            objective.weights = if schedule.adaptive_weights {
                config.loss.apply(adaptive_weights(b.mse_g, b.mse_o))
            } else {
                WeightState::default()
            };
            objective.recent.clear();
        }
        let optimizer = OptimizerConfig {
            max_iterations: iterations,
            ..config.optimizer
        };
        let result = minimize(&mut objective, &x, &optimizer)?;
        x = result.x;
        start_totals.extend(result.start_values);
        evaluations += result.evaluations;
        termination = result.termination;
    }

    let params = ParameterSet::unflatten(&x, &network)?;
    if objective.history.len() != start_totals.len() {
        return Err(Error::invalid("optimizer and loss history out of step"));
    }
    Ok(FitResult {
        theta_hat: params.theta,
        initial_theta: init.theta,
        parameters: params.to_snapshot(),
        iterations: objective.history.len(),
        loss_history: objective.history,
        start_totals,
        theta_history: objective.thetas,
        evaluations,
        termination,
    })
}

/// Table-style error summary of a fit against its measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub theta_true: f64,
    pub theta_pred: f64,
    pub relative_error: f64,
    /// `Σ |u_pred - u_m|` over the measurement points.
    pub abs_error_sum: f64,
    pub abs_error_mean: f64,
}

pub fn summarize(fit: &FitResult, case: &CaseDefinition, data: &MeasurementSet, lambda: f64) -> Result<FitSummary> {
    let params = fit.params()?;
    let abs_error_sum: f64 = data
        .points()
        .iter()
        .map(|&(t, u)| (params.predict(t).u - u).abs())
        .sum();
    Ok(FitSummary {
        lambda,
        theta_true: case.true_theta,
        theta_pred: fit.theta_hat,
        relative_error: (fit.theta_hat - case.true_theta) / case.true_theta,
        abs_error_sum,
        abs_error_mean: abs_error_sum / data.len() as f64,
    })
}
