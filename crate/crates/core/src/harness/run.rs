use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ControllerConfig, ExperimentConfig, PlantConfig, SetpointChange};
use super::cost::{closed_loop_cost, CONVERGENCE_BAND, CONVERGENCE_STEPS};
use super::HarnessError;
use crate::controller::ControllerError;
use crate::hankel::Sequence;
use crate::linalg;
use crate::lti_mpc::{DataBuffer, LtiController, Scheme};
use crate::nl_mpc::NlController;
use crate::plant::{measure, perturbed_four_tank, FourTank, LtiSystem, NoiseSource, Plant};
use crate::qp::QpStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Excitation,
    Control,
}

/// One simulated step. Controller diagnostics are `None` during excitation
/// and on steps where the controller failed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub u: DVector<f64>,
    /// Noise-free plant output.
    pub y: DVector<f64>,
    /// Output as seen by the controller.
    pub y_measured: DVector<f64>,
    pub x: DVector<f64>,
    pub y_target: DVector<f64>,
    pub objective: Option<f64>,
    pub alpha_norm: Option<f64>,
    pub sigma_norm: Option<f64>,
    pub u_s_art: Option<DVector<f64>>,
    pub y_s_art: Option<DVector<f64>>,
    pub pe_min_sv: Option<f64>,
    pub qp_iters: Option<usize>,
    /// Controller wall time in seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityEvent {
    pub t: usize,
    pub status: Option<QpStatus>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Accumulated while running over the cost window clipped to the log.
    pub cost: f64,
    /// Mean of `|y_t - y_T(t)|_inf` over the final steps.
    pub steady_state_error: f64,
    pub converged: bool,
    pub infeasibility_events: Vec<InfeasibilityEvent>,
    /// Steps where the solver stopped at its iteration limit.
    pub max_iteration_steps: usize,
    pub total_wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub name: String,
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
    /// Whether the controller reports an artificial setpoint.
    pub has_artificial_setpoint: bool,
}

impl SimulationLog {
    pub fn outputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.records.iter().map(|r| &r.y)
    }
}

enum Active {
    Waiting(Scheme, crate::lti_mpc::LtiControllerConfig),
    Lti(LtiController),
    Nl(NlController),
}

fn build_plant(cfg: &ExperimentConfig) -> Result<Box<dyn Plant>, HarnessError> {
    match &cfg.plant {
        PlantConfig::FourTank {
            params,
            perturbation,
            substeps,
            x0,
        } => {
            let params = match perturbation {
                Some(p) => perturbed_four_tank(params, p.spread, p.seed)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
                None => *params,
            };
            Ok(Box::new(
                FourTank::new(params).with_substeps(*substeps).with_state(*x0),
            ))
        }
        PlantConfig::Lti { .. } => Ok(Box::new(lti_plant(&cfg.plant)?)),
    }
}

/// State-space plant described by an `lti` plant config.
pub fn lti_plant(plant: &PlantConfig) -> Result<LtiSystem, HarnessError> {
    let PlantConfig::Lti { a, b, c, d, x0 } = plant else {
        return Err(HarnessError::Config("not an LTI plant".into()));
    };
    let a = matrix("a", a)?;
    let b = matrix("b", b)?;
    let c = matrix("c", c)?;
    let d = match d {
        Some(d) => matrix("d", d)?,
        None => DMatrix::zeros(c.nrows(), b.ncols()),
    };
    let sys = LtiSystem::new(a, b, c, d).map_err(|e| HarnessError::Config(e.to_string()))?;
    let x0 = match x0 {
        Some(x) if x.len() == sys.order() => DVector::from_vec(x.clone()),
        Some(_) => return Err(HarnessError::Config("x0 length does not match A".into())),
        None => DVector::zeros(sys.order()),
    };
    Ok(sys.with_state(x0))
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(HarnessError::Config(format!("matrix {name} must be non-empty and rectangular")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Input setpoint for an LTI controller: given, or least-squares inverse of
/// the plant's steady-state gain.
fn input_setpoint(cfg: &ExperimentConfig, change: &SetpointChange) -> Result<DVector<f64>, HarnessError> {
    if let Some(u) = &change.u {
        return Ok(DVector::from_vec(u.clone()));
    }
    let sys = lti_plant(&cfg.plant).map_err(|_| {
        HarnessError::Config(format!(
            "setpoint at step {} needs an input setpoint `u`",
            change.start
        ))
    })?;
    let n = sys.order();
    let inv = (DMatrix::identity(n, n) - &sys.a)
        .try_inverse()
        .ok_or_else(|| HarnessError::Config("plant has a pole at 1; give `u` explicitly".into()))?;
    let gain = &sys.c * inv * &sys.b + &sys.d;
    Ok(linalg::lstsq(&gain, &DVector::from_vec(change.y.clone()), 1e-12))
}

/// Runs excitation then closed loop.
///
/// At step `t` the input is chosen from measurements up to `t - 1`, the
/// output `y_t` is measured and logged, then the plant advances. Controller
/// failures are logged and the previous input is held; only invalid
/// configurations abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SimulationLog, HarnessError> {
    cfg.validate()?;
    let data_len = cfg.data_len();
    let mut plant = build_plant(cfg)?;
    let (m, p) = (plant.input_dim(), plant.output_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise = NoiseSource::new(cfg.noise.model, cfg.noise.seed);
    let s_cost = cfg.cost_weight();

    let mut active = match &cfg.controller {
        ControllerConfig::Nominal(s) => {
            let mut c = cfg.lti_config(s, Scheme::Nominal)?;
            c.u_setpoint = input_setpoint(cfg, &cfg.schedule[0])?;
            Active::Waiting(Scheme::Nominal, c)
        }
        ControllerConfig::Robust(s) => {
            let mut c = cfg.lti_config(s, Scheme::Robust)?;
            c.u_setpoint = input_setpoint(cfg, &cfg.schedule[0])?;
            Active::Waiting(Scheme::Robust, c)
        }
        ControllerConfig::Nonlinear(s) => Active::Nl(NlController::new(cfg.nl_config(s)?)?),
    };
    let has_artificial_setpoint = matches!(active, Active::Nl(_));

    let mut records: Vec<StepRecord> = Vec::with_capacity(cfg.t_end);
    let mut events = Vec::new();
    let mut max_iteration_steps = 0;
    let mut cost = 0.0;
    let mut total_wall_time = 0.0;
    let mut current_target = 0usize;
    let mut u_prev = DVector::from_vec(cfg.excitation.lower.clone());

    for t in 0..cfg.t_end {
        // Setpoint changes.
        let target_idx = cfg.schedule.iter().rposition(|c| c.start <= t).unwrap_or(0);
        let target = &cfg.schedule[target_idx];
        let y_target = DVector::from_vec(target.y.clone());
        if target_idx != current_target {
            current_target = target_idx;
            info!("t = {t}: target changes to {:?}", target.y);
            match &mut active {
                Active::Nl(c) => c.set_target(y_target.clone())?,
                Active::Lti(c) => c.set_setpoint(input_setpoint(cfg, target)?, y_target.clone())?,
                Active::Waiting(_, c) => {
                    c.u_setpoint = input_setpoint(cfg, target)?;
                    c.y_setpoint = y_target.clone();
                }
            }
        }

        // Controller hand-over: LTI controllers take the excitation data.
        if t == data_len {
            if let Active::Waiting(scheme, c) = &active {
                let us: Vec<DVector<f64>> = records.iter().map(|r| r.u.clone()).collect();
                let ys: Vec<DVector<f64>> = records.iter().map(|r| r.y_measured.clone()).collect();
                let data = DataBuffer::new(Sequence::from_vectors(&us)?, Sequence::from_vectors(&ys)?)?;
                let mut ctrl = LtiController::new(c.clone(), *scheme, &data)?;
                for r in &records[data_len.saturating_sub(c.order)..] {
                    ctrl.observe(r.u.clone(), r.y_measured.clone());
                }
                active = Active::Lti(ctrl);
            }
        }

        let mut rec = StepRecord {
            t,
            phase: Phase::Excitation,
            u: DVector::zeros(m),
            y: DVector::zeros(p),
            y_measured: DVector::zeros(p),
            x: plant.state(),
            y_target,
            objective: None,
            alpha_norm: None,
            sigma_norm: None,
            u_s_art: None,
            y_s_art: None,
            pe_min_sv: None,
            qp_iters: None,
            wall_time: 0.0,
        };

        let u = if t < data_len {
            DVector::from_fn(m, |i, _| {
                rng.gen_range(cfg.excitation.lower[i]..=cfg.excitation.upper[i])
            })
        } else {
            rec.phase = Phase::Control;
            let started = Instant::now();
            let outcome = control_step(&mut active, &mut rec);
            rec.wall_time = started.elapsed().as_secs_f64();
            total_wall_time += rec.wall_time;
            match outcome {
                Ok((u, status)) => {
                    if status == QpStatus::MaxIterations {
                        max_iteration_steps += 1;
                    }
                    u
                }
                Err(e) => {
                    let status = match &e {
                        ControllerError::QpFailed { status, .. } => Some(*status),
                        _ => None,
                    };
                    warn!("t = {t}: controller failed ({e}); holding previous input");
                    events.push(InfeasibilityEvent {
                        t,
                        status,
                        message: e.to_string(),
                    });
                    u_prev.clone()
                }
            }
        };

        let y = plant.output(&u);
        let y_measured = measure(&y, &mut noise);
        if let Active::Nl(c) = &mut active {
            c.observe(u.clone(), y_measured.clone());
        } else if let Active::Lti(c) = &mut active {
            c.observe(u.clone(), y_measured.clone());
        }
        if t >= cfg.cost.t_start && t <= cfg.cost.t_end {
            let e = &y - &rec.y_target;
            cost += e.dot(&(&s_cost * &e));
        }
        rec.u = u.clone();
        rec.y = y;
        rec.y_measured = y_measured;
        records.push(rec);
        plant.step(&u);
        u_prev = u;
    }

    // Guard against drift between the running sum and the recomputation.
    let t_last = records.len().saturating_sub(1);
    if cfg.cost.t_start <= t_last && !records.is_empty() {
        let check = closed_loop_cost(&records, &s_cost, cfg.cost.t_start, cfg.cost.t_end.min(t_last))?;
        debug_assert!((check - cost).abs() <= 1e-9 * (1.0 + cost.abs()));
    }

    let control: Vec<&StepRecord> = records.iter().filter(|r| r.phase == Phase::Control).collect();
    let steady_state_error = if control.is_empty() {
        f64::NAN
    } else {
        let tail = &control[control.len().saturating_sub(CONVERGENCE_STEPS)..];
        tail.iter().map(|r| (&r.y - &r.y_target).amax()).sum::<f64>() / tail.len() as f64
    };
    let converged = control.len() >= CONVERGENCE_STEPS && steady_state_error <= CONVERGENCE_BAND;

    Ok(SimulationLog {
        name: cfg.name.clone(),
        records,
        summary: RunSummary {
            cost,
            steady_state_error,
            converged,
            infeasibility_events: events,
            max_iteration_steps,
            total_wall_time,
        },
        has_artificial_setpoint,
    })
}

fn control_step(active: &mut Active, rec: &mut StepRecord) -> Result<(DVector<f64>, QpStatus), ControllerError> {
    match active {
        Active::Nl(c) => {
            let u = c.next_input()?;
            let sol = c.last_solution().expect("solved above");
            rec.objective = Some(sol.objective);
            rec.alpha_norm = Some(sol.alpha.norm());
            rec.sigma_norm = Some(sol.sigma.norm());
            rec.u_s_art = Some(sol.u_s_art.clone());
            rec.y_s_art = Some(sol.y_s_art.clone());
            rec.qp_iters = Some(sol.qp_stats.iterations + sol.qp_stats.polish_iterations);
            rec.pe_min_sv = c.last_pe().map(|pe| pe.smallest_retained_singular_value);
            Ok((u, sol.qp_stats.status))
        }
        Active::Lti(c) => {
            let queued = c.pending_inputs() > 0;
            let u = c.next_input()?;
            if !queued {
                let sol = c.last_solution().expect("solved above");
                rec.objective = Some(sol.objective);
                rec.alpha_norm = Some(sol.alpha.norm());
                rec.sigma_norm = Some(sol.sigma.norm());
                rec.qp_iters = Some(sol.qp_stats.iterations + sol.qp_stats.polish_iterations);
            }
            rec.pe_min_sv = Some(c.pe_report().smallest_retained_singular_value);
            Ok((u, QpStatus::Optimal))
        }
        Active::Waiting(..) => unreachable!("controller is built at hand-over"),
    }
}
