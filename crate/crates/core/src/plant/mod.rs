//! Simulation plants: the four-tank benchmark, random LTI systems, and the
//! bounded measurement-noise model.

mod four_tank;
mod lti;
mod noise;

use nalgebra::DVector;
use thiserror::Error;

pub use four_tank::{
    continuous_dynamics, equilibrium_state, euler_step, perturbed_four_tank, FourTank,
    FourTankParams, PlantState, SAMPLING_TIME,
};
pub use lti::{random_lti, LtiCertificate, LtiSystem};
pub use noise::{measure, NoiseModel, NoiseSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("negative water level {level} in tank {tank}")]
    NegativeLevel { tank: usize, level: f64 },
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("no system with the requested properties after {0} attempts")]
    SamplingFailed(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A discrete-time plant driven by the closed-loop harness.
///
/// Each step the harness picks `u_t`, reads `y_t = output(u_t)`, then calls
/// `step(u_t)` to advance to `x_{t+1}`.
pub trait Plant: Send {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn state(&self) -> DVector<f64>;
    /// Noise-free output at the current state.
    fn output(&self, u: &DVector<f64>) -> DVector<f64>;
    fn step(&mut self, u: &DVector<f64>);
}
