//! Data-driven model predictive control.
//!
//! Controllers in this crate never see a state-space model. Their prediction
//! model is the column span of Hankel matrices built from one measured
//! input-output trajectory (see [`hankel`]). The crate provides
//!
//! * [`lti_mpc`]: nominal and robust controllers for linear plants,
//! * [`nl_mpc`]: a controller for nonlinear plants that keeps its data window
//!   up to date and optimizes an artificial equilibrium online,
//! * [`qp`]: the dense QP solver behind all of them,
//! * [`plant`]: a four-tank simulator and random LTI test plants,
//! * [`harness`]: closed-loop experiment runner, logs, sweeps and configs.

pub mod hankel;
pub mod linalg;
pub mod qp;
pub mod plant;

mod controller;
pub use controller::{BoxSet, ControllerError, PastWindow, QpStats};
pub mod lti_mpc;
pub mod nl_mpc;
pub mod harness;
