//! Identification of the drift parameter of Volterra integral equations
//! perturbed by Gaussian noise.
//!
//! The pipeline is: simulate noisy trajectories ([`simulator`]), average them
//! into measurement data, fit a two-headed tanh network together with `θ`
//! ([`network`], [`loss`], [`fit`]), then validate the recovered equation by
//! simulating forward with confidence bands ([`prediction`]).

pub mod autodiff;
pub mod cases;
pub mod error;
pub mod fit;
pub mod lbfgs;
pub mod loss;
pub mod network;
pub mod prediction;
pub mod simulator;

pub use cases::{CaseDefinition, CaseName};
pub use error::{Error, Result};
