use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::{ControllerConfig, ExperimentConfig};
use super::cost::GOOD_COST;
use super::run::run_experiment;
use super::HarnessError;

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    LambdaAlpha,
    LambdaSigma,
    /// Data length; also moves the start of the cost window.
    DataLen,
    Horizon,
    Order,
    /// Target weight `S = s_bar * I` of the controller. The cost weight is
    /// left unchanged.
    SBar,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::LambdaAlpha => "lambda_alpha",
            SweepParam::LambdaSigma => "lambda_sigma",
            SweepParam::DataLen => "N",
            SweepParam::Horizon => "L",
            SweepParam::Order => "n",
            SweepParam::SBar => "s_bar",
        }
    }

    fn is_integer(&self) -> bool {
        matches!(self, SweepParam::DataLen | SweepParam::Horizon | SweepParam::Order)
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "lambda_alpha" => SweepParam::LambdaAlpha,
            "lambda_sigma" => SweepParam::LambdaSigma,
            "N" | "data_len" => SweepParam::DataLen,
            "L" | "horizon" => SweepParam::Horizon,
            "n" | "order" => SweepParam::Order,
            "s_bar" => SweepParam::SBar,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown sweep parameter `{other}` (lambda_alpha, lambda_sigma, N, L, n, s_bar)"
                )))
            }
        })
    }
}

/// Copy of `base` with `param` set to `value`.
pub fn apply_parameter(
    base: &ExperimentConfig,
    param: SweepParam,
    value: f64,
) -> Result<ExperimentConfig, HarnessError> {
    if param.is_integer() && (value < 1.0 || value.fract() != 0.0) {
        return Err(HarnessError::Config(format!(
            "{} must be a positive integer, got {value}",
            param.name()
        )));
    }
    let mut cfg = base.clone();
    let int = value as usize;
    match param {
        SweepParam::DataLen => {
            cfg.excitation.steps = int;
            cfg.cost.t_start = int;
            cfg.cost.t_end = cfg.cost.t_end.max(int);
            cfg.t_end = cfg.t_end.max(int + 1);
        }
        _ => match &mut cfg.controller {
            ControllerConfig::Nonlinear(s) => match param {
                SweepParam::LambdaAlpha => s.lambda_alpha = value,
                SweepParam::LambdaSigma => s.lambda_sigma = value,
                SweepParam::Horizon => s.horizon = int,
                SweepParam::Order => s.order = int,
                SweepParam::SBar => s.s.iter_mut().for_each(|w| *w = value),
                SweepParam::DataLen => unreachable!(),
            },
            ControllerConfig::Nominal(s) | ControllerConfig::Robust(s) => match param {
                SweepParam::LambdaAlpha => s.lambda_alpha = value,
                SweepParam::LambdaSigma => s.lambda_sigma = value,
                SweepParam::Horizon => s.horizon = int,
                SweepParam::Order => s.order = int,
                SweepParam::SBar => {
                    return Err(HarnessError::Config(
                        "s_bar only applies to the nonlinear controller".into(),
                    ))
                }
                SweepParam::DataLen => unreachable!(),
            },
        },
    }
    cfg.name = format!("{}_{}_{}", base.name, param.name(), value);
    Ok(cfg)
}

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub cost: f64,
    pub converged: bool,
    pub steady_state_error: f64,
    pub infeasible_steps: usize,
    /// Set when the run could not be executed at all.
    pub error: Option<String>,
}

/// Aggregate over seeds for one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub median_cost: f64,
    pub converged_runs: usize,
    pub runs: usize,
    /// Median cost at most the good-performance threshold.
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    pub rows: Vec<SweepRow>,
}

/// Runs every `(value, seed)` combination on an isolated plant and
/// controller. `jobs = 0` uses all cores. Results do not depend on `jobs`.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    grid: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepResult, HarnessError> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("sweep needs a grid and at least one seed".into()));
    }
    let tasks: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run_one = |&(value, seed): &(f64, u64)| -> SweepPoint {
        let outcome = apply_parameter(base, param, value).and_then(|mut cfg| {
            cfg.seed = seed;
            run_experiment(&cfg)
        });
        match outcome {
            Ok(log) => SweepPoint {
                value,
                seed,
                cost: log.summary.cost,
                converged: log.summary.converged,
                steady_state_error: log.summary.steady_state_error,
                infeasible_steps: log.summary.infeasibility_events.len(),
                error: None,
            },
            Err(e) => SweepPoint {
                value,
                seed,
                cost: f64::INFINITY,
                converged: false,
                steady_state_error: f64::NAN,
                infeasible_steps: 0,
                error: Some(e.to_string()),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let points: Vec<SweepPoint> = pool.install(|| tasks.par_iter().map(run_one).collect());

    let rows = grid
        .iter()
        .map(|&value| {
            let mut costs: Vec<f64> = points
                .iter()
                .filter(|p| p.value == value)
                .map(|p| p.cost)
                .collect();
            let converged_runs = points
                .iter()
                .filter(|p| p.value == value && p.converged)
                .count();
            let median_cost = median(&mut costs);
            SweepRow {
                value,
                median_cost,
                converged_runs,
                runs: costs.len(),
                good: median_cost <= GOOD_COST,
            }
        })
        .collect();
    Ok(SweepResult {
        param,
        points,
        rows,
    })
}

/// Median; the mean of the two middle values for even counts.
pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub fn write_sweep_csv<W: Write>(res: &SweepResult, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        res.param.name(),
        "seed",
        "cost",
        "converged",
        "steady_state_error",
        "infeasible_steps",
        "error",
    ])?;
    for p in &res.points {
        w.write_record([
            p.value.to_string(),
            p.seed.to_string(),
            p.cost.to_string(),
            p.converged.to_string(),
            p.steady_state_error.to_string(),
            p.infeasible_steps.to_string(),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_sweep_summary<W: Write>(res: &SweepResult, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([res.param.name(), "median_cost", "converged_runs", "runs", "good"])?;
    for r in &res.rows {
        w.write_record([
            r.value.to_string(),
            r.median_cost.to_string(),
            r.converged_runs.to_string(),
            r.runs.to_string(),
            r.good.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}
