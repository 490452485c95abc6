//! Benchmark equations and the generic-kernel setup.
//!
//! Every case is stored with the drift written as `X = f - θ ∫ k(t, s) X(s) ds + noise`
//! (sign `-1`), so the true parameter is `θ = 1` throughout. Cases 2 and 3 are
//! time-shifted equations on `[-1, 1/2]`; after the substitution `r = s - 1`
//! their drift integrals run over `[-1, t]` in the solution variable, which
//! is the form stored here.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{NoiseMode, ProblemSpec, ScalarFn, TimeGrid};

/// Kernel without the parameter, `(t, s) -> k(t, s)`.
pub type BaseKernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseName {
    Case1,
    Case2,
    Case3,
    Generic,
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseName::Case1 => "case1",
            CaseName::Case2 => "case2",
            CaseName::Case3 => "case3",
            CaseName::Generic => "generic",
        };
        f.write_str(s)
    }
}

impl FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-', ' '], "").as_str() {
            "case1" | "1" => Ok(CaseName::Case1),
            "case2" | "2" => Ok(CaseName::Case2),
            "case3" | "3" => Ok(CaseName::Case3),
            "generic" => Ok(CaseName::Generic),
            _ => Err(Error::invalid(format!("unknown case '{s}'"))),
        }
    }
}

/// Relation between the auxiliary output `v` and the primary output `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputCondition {
    /// `v'' = u` (kernel `t - s`).
    SecondDerivative,
    /// `v' = e^{2t} u + v` (kernel `e^{t+s}`).
    ExponentialShift,
    /// `t v' = t³ u + v` (kernel `t s`, multiplied through by `t`).
    ScaledLinear,
    /// `v' = k(t, t) u + ∫ ∂k/∂t u ds`, integral by left Riemann sum over collocation nodes.
    Generic,
}

/// A named identification problem.
#[derive(Clone)]
pub struct CaseDefinition {
    pub name: CaseName,
    pub t0: f64,
    pub t_end: f64,
    pub forcing: ScalarFn,
    pub kernel: BaseKernelFn,
    pub kernel_dt: Option<BaseKernelFn>,
    /// Sign in front of `θ ∫ k X ds`.
    pub drift_sign: f64,
    pub output_condition: OutputCondition,
    /// Time at which `v = 0` is imposed; equals `t0`.
    pub t_ic: f64,
    pub true_theta: f64,
    /// Noise-free solution at `true_theta`, when known.
    pub true_solution: Option<ScalarFn>,
    pub noise_mode: NoiseMode,
    pub default_lambdas: Vec<f64>,
}

impl fmt::Debug for CaseDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaseDefinition")
            .field("name", &self.name)
            .field("domain", &(self.t0, self.t_end))
            .field("output_condition", &self.output_condition)
            .field("noise_mode", &self.noise_mode)
            .finish_non_exhaustive()
    }
}

impl CaseDefinition {
    pub fn builtin(name: CaseName) -> Result<Self> {
        match name {
            CaseName::Case1 => Ok(case1()),
            CaseName::Case2 => Ok(case2()),
            CaseName::Case3 => Ok(case3()),
            CaseName::Generic => Err(Error::invalid(
                "the generic case has no built-in definition; use CaseDefinition::generic",
            )),
        }
    }

    /// User-supplied equation `X = f + sign·θ ∫_{t0}^t k(t,s) X(s) ds + λ·noise`.
    #[allow(clippy::too_many_arguments)]
    pub fn generic(
        t0: f64,
        t_end: f64,
        forcing: ScalarFn,
        kernel: BaseKernelFn,
        kernel_dt: Option<BaseKernelFn>,
        drift_sign: f64,
        noise_mode: NoiseMode,
        true_theta: f64,
    ) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::invalid("domain must have positive length"));
        }
        Ok(Self {
            name: CaseName::Generic,
            t0,
            t_end,
            forcing,
            kernel,
            kernel_dt,
            drift_sign,
            output_condition: OutputCondition::Generic,
            t_ic: t0,
            true_theta,
            true_solution: None,
            noise_mode,
            default_lambdas: vec![0.0],
        })
    }

    /// Same equation, but the output condition replaced by the generic form.
    pub fn as_generic(&self) -> Self {
        Self {
            output_condition: OutputCondition::Generic,
            ..self.clone()
        }
    }

    /// Full kernel `k(θ, t, s) = sign·θ·k(t, s)` as used by the simulator.
    pub fn problem_on(&self, theta: f64, lambda: f64, grid: TimeGrid) -> Result<ProblemSpec> {
        let sign = self.drift_sign;
        let k = self.kernel.clone();
        let kernel = Arc::new(move |th: f64, t: f64, s: f64| sign * th * k(t, s));
        let kernel_dt: crate::simulator::KernelFn = match &self.kernel_dt {
            Some(kd) => {
                let kd = kd.clone();
                Arc::new(move |th: f64, t: f64, s: f64| sign * th * kd(t, s))
            }
            None => Arc::new(|_, _, _| f64::NAN),
        };
        ProblemSpec::new(
            self.forcing.clone(),
            kernel,
            kernel_dt,
            theta,
            self.noise_mode,
            lambda,
            grid,
        )
    }

    /// Problem on the case's own domain with `n` subintervals.
    pub fn problem(&self, theta: f64, lambda: f64, n: usize) -> Result<ProblemSpec> {
        self.problem_on(theta, lambda, TimeGrid::new(self.t0, self.t_end, n)?)
    }

    /// Drift integral `∫ k(t, s) X(s) ds` of the true solution, recovered from
    /// the equation itself: `v = (X - f) / (sign·θ)`.
    pub fn true_drift_integral(&self, t: f64) -> Option<f64> {
        let x = self.true_solution.as_ref()?(t);
        Some((x - (self.forcing)(t)) / (self.drift_sign * self.true_theta))
    }
}

fn case1() -> CaseDefinition {
    CaseDefinition {
        name: CaseName::Case1,
        t0: 0.0,
        t_end: 3.0,
        forcing: Arc::new(|t: f64| 4.0 * t.exp() + 3.0 * t - 4.0),
        kernel: Arc::new(|t, s| t - s),
        kernel_dt: Some(Arc::new(|_, _| 1.0)),
        drift_sign: -1.0,
        output_condition: OutputCondition::SecondDerivative,
        t_ic: 0.0,
        true_theta: 1.0,
        true_solution: Some(Arc::new(|t: f64| {
            2.0 * t.exp() - 2.0 * t.cos() + 5.0 * t.sin()
        })),
        noise_mode: NoiseMode::BrownianIntegrand,
        default_lambdas: vec![0.0, 1.0, 5.0, 20.0],
    }
}

fn case2() -> CaseDefinition {
    let em4 = (-4.0f64).exp();
    CaseDefinition {
        name: CaseName::Case2,
        t0: -1.0,
        t_end: 0.5,
        forcing: Arc::new(move |t: f64| {
            (-t).exp()
                + (3.0 * t).exp()
                + t.exp() * (t + 1.0)
                + 0.25 * t.exp() * ((4.0 * t).exp() - em4)
        }),
        kernel: Arc::new(|t: f64, s: f64| (t + s).exp()),
        kernel_dt: Some(Arc::new(|t: f64, s: f64| (t + s).exp())),
        drift_sign: -1.0,
        output_condition: OutputCondition::ExponentialShift,
        t_ic: -1.0,
        true_theta: 1.0,
        true_solution: Some(Arc::new(|t: f64| (-t).exp() + (3.0 * t).exp())),
        noise_mode: NoiseMode::BrownianIntegrand,
        default_lambdas: vec![0.0, 0.1, 1.0, 2.0],
    }
}

fn case3() -> CaseDefinition {
    let em1 = (-1.0f64).exp();
    CaseDefinition {
        name: CaseName::Case3,
        t0: -1.0,
        t_end: 0.5,
        forcing: Arc::new(move |t: f64| {
            let g = (-t * t).exp();
            g + 0.5 * t * em1 - 0.5 * t * g
        }),
        kernel: Arc::new(|t, s| t * s),
        kernel_dt: Some(Arc::new(|_, s| s)),
        drift_sign: -1.0,
        output_condition: OutputCondition::ScaledLinear,
        t_ic: -1.0,
        true_theta: 1.0,
        true_solution: Some(Arc::new(|t: f64| (-t * t).exp())),
        noise_mode: NoiseMode::AdditiveBrownian,
        default_lambdas: vec![0.0, 0.1, 1.0, 2.0],
    }
}
