use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::BoxSet;
use crate::lti_mpc::{LtiControllerConfig, Scheme};
use crate::nl_mpc::NlControllerConfig;
use crate::plant::{FourTankParams, NoiseModel};
use crate::qp::QpSettings;

/// Everything needed to reproduce one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Number of simulated steps; the log has one record per step.
    pub t_end: usize,
    /// Seed of the excitation sequence.
    pub seed: u64,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub excitation: ExcitationConfig,
    /// Target changes as `(start step, y_target)`; the first entry must start at 0.
    pub schedule: Vec<SetpointChange>,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    FourTank {
        #[serde(default)]
        params: FourTankParams,
        /// Relative parameter spread of a randomly perturbed plant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbation: Option<Perturbation>,
        #[serde(default = "one")]
        substeps: usize,
        #[serde(default)]
        x0: [f64; 4],
    },
    /// Row-major state-space matrices.
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub spread: f64,
    pub seed: u64,
}

/// Diagonal weights are given as vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Nominal(LtiSettings),
    Robust(LtiSettings),
    Nonlinear(NlSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiSettings {
    pub horizon: usize,
    pub order: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub input_box: BoxSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_box: Option<BoxSet>,
    #[serde(default = "default_lambda_alpha")]
    pub lambda_alpha: f64,
    #[serde(default = "default_lambda_sigma")]
    pub lambda_sigma: f64,
    #[serde(default)]
    pub eps_bar: f64,
}

fn default_lambda_alpha() -> f64 {
    1e-3
}

fn default_lambda_sigma() -> f64 {
    1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlSettings {
    pub horizon: usize,
    pub order: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda_alpha: f64,
    pub lambda_sigma: f64,
    pub input_box: BoxSet,
    pub setpoint_box: BoxSet,
    #[serde(default = "yes")]
    pub update_data: bool,
}

fn yes() -> bool {
    true
}

/// I.i.d. uniform inputs on a box; its duration is the data length `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointChange {
    pub start: usize,
    pub y: Vec<f64>,
    /// Input setpoint for the LTI controllers. Derived from the plant's
    /// steady-state gain when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub model: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

/// `J = sum_{t = t_start}^{t_end} |y_t - y_T(t)|_S^2` with `S = diag(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub s: Vec<f64>,
    pub t_start: usize,
    pub t_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = QpSettings::default();
        Self {
            abs_tol: d.abs_tol,
            rel_tol: d.rel_tol,
            max_iter: d.max_iter,
        }
    }
}

impl SolverConfig {
    pub fn settings(&self) -> QpSettings {
        QpSettings {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
            ..QpSettings::default()
        }
    }
}

impl PlantConfig {
    pub fn dims(&self) -> Result<(usize, usize), HarnessError> {
        match self {
            PlantConfig::FourTank { .. } => Ok((2, 2)),
            PlantConfig::Lti { b, c, .. } => {
                let m = b.first().map_or(0, Vec::len);
                Ok((m, c.len()))
            }
        }
    }
}

impl ExperimentConfig {
    /// Data length `N`: the controller takes over at this step.
    pub fn data_len(&self) -> usize {
        self.excitation.steps
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let (m, p) = self.plant.dims()?;
        if self.t_end < self.data_len() {
            return bad(format!(
                "t_end {} is shorter than the excitation phase {}",
                self.t_end,
                self.data_len()
            ));
        }
        if self.excitation.lower.len() != m || self.excitation.upper.len() != m {
            return bad(format!("excitation bounds must have {m} entries"));
        }
        if self
            .excitation
            .lower
            .iter()
            .zip(&self.excitation.upper)
            .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
        {
            return bad("excitation bounds must be finite with lower <= upper".into());
        }
        match self.schedule.first() {
            Some(first) if first.start == 0 => {}
            _ => return bad("schedule must start at step 0".into()),
        }
        if self.schedule.windows(2).any(|w| w[0].start >= w[1].start) {
            return bad("schedule steps must be strictly increasing".into());
        }
        for change in &self.schedule {
            if change.y.len() != p {
                return bad(format!("setpoint at step {} must have {p} outputs", change.start));
            }
            if change.u.as_ref().is_some_and(|u| u.len() != m) {
                return bad(format!("input setpoint at step {} must have {m} entries", change.start));
            }
        }
        if self.cost.s.len() != p || self.cost.s.iter().any(|&s| !(s >= 0.0)) {
            return bad(format!("cost weights must be {p} nonnegative numbers"));
        }
        if self.cost.t_start > self.cost.t_end {
            return bad("cost window is empty".into());
        }
        if let PlantConfig::FourTank {
            params,
            perturbation,
            substeps,
            ..
        } = &self.plant
        {
            params.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if *substeps == 0 {
                return bad("substeps must be at least 1".into());
            }
            if let Some(pert) = perturbation {
                if !(0.0..=0.5).contains(&pert.spread) {
                    return bad("perturbation spread must lie in [0, 0.5]".into());
                }
            }
        }
        match &self.controller {
            ControllerConfig::Nominal(s) => {
                self.lti_config(s, Scheme::Nominal)?;
            }
            ControllerConfig::Robust(s) => {
                self.lti_config(s, Scheme::Robust)?;
            }
            ControllerConfig::Nonlinear(s) => {
                self.nl_config(s)?;
            }
        }
        Ok(())
    }

    /// The target in force at step `t`.
    pub fn target_at(&self, t: usize) -> &SetpointChange {
        self.schedule
            .iter()
            .rev()
            .find(|c| c.start <= t)
            .unwrap_or(&self.schedule[0])
    }

    pub fn cost_weight(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.cost.s.clone()))
    }

    /// Library config with the first scheduled setpoint. The input setpoint
    /// is left at zero when the schedule does not specify one.
    pub fn lti_config(
        &self,
        s: &LtiSettings,
        scheme: Scheme,
    ) -> Result<LtiControllerConfig, HarnessError> {
        let (m, p) = self.plant.dims()?;
        check_len("q", &s.q, p)?;
        check_len("r", &s.r, m)?;
        let first = &self.schedule[0];
        let cfg = LtiControllerConfig {
            horizon: s.horizon,
            order: s.order,
            q: diag(&s.q),
            r: diag(&s.r),
            u_setpoint: first
                .u
                .as_ref()
                .map_or_else(|| DVector::zeros(m), |u| DVector::from_vec(u.clone())),
            y_setpoint: DVector::from_vec(first.y.clone()),
            input_box: s.input_box.clone(),
            output_box: s.output_box.clone().unwrap_or_else(|| BoxSet::unbounded(p)),
            lambda_alpha: s.lambda_alpha,
            lambda_sigma: s.lambda_sigma,
            eps_bar: s.eps_bar,
            qp: self.solver.settings(),
        };
        cfg.validate(scheme)?;
        Ok(cfg)
    }

    pub fn nl_config(&self, s: &NlSettings) -> Result<NlControllerConfig, HarnessError> {
        let (m, p) = self.plant.dims()?;
        check_len("q", &s.q, p)?;
        check_len("r", &s.r, m)?;
        check_len("s", &s.s, p)?;
        let cfg = NlControllerConfig {
            window_len: self.data_len(),
            horizon: s.horizon,
            order: s.order,
            q: diag(&s.q),
            r: diag(&s.r),
            s: diag(&s.s),
            lambda_alpha: s.lambda_alpha,
            lambda_sigma: s.lambda_sigma,
            y_target: DVector::from_vec(self.schedule[0].y.clone()),
            input_box: s.input_box.clone(),
            setpoint_box: s.setpoint_box.clone(),
            update_data: s.update_data,
            qp: self.solver.settings(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<(), HarnessError> {
    if v.len() != n {
        return Err(HarnessError::Config(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text)
}

/// Parses and validates a TOML config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_string(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    toml::to_string_pretty(cfg).map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), HarnessError> {
    let text = config_to_string(cfg)?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
