use nalgebra::{DMatrix, DVector};

use super::config::SetpointChange;
use super::run::StepRecord;
use super::HarnessError;

/// Threshold on the final-window mean of `|y_t - y_T|_inf`.
pub const CONVERGENCE_BAND: f64 = 0.5;
/// Length of that final window.
pub const CONVERGENCE_STEPS: usize = 50;
/// Cost below which a run counts as performing well.
pub const GOOD_COST: f64 = 1.5e5;

/// `sum_{t = t_start}^{t_end} |y_t - y_T(t)|_S^2` using the targets stored in
/// the records.
pub fn closed_loop_cost(
    records: &[StepRecord],
    s: &DMatrix<f64>,
    t_start: usize,
    t_end: usize,
) -> Result<f64, HarnessError> {
    check_window(records.len(), t_start, t_end)?;
    Ok(records[t_start..=t_end]
        .iter()
        .map(|r| weighted(&(&r.y - &r.y_target), s))
        .sum())
}

/// Same sum for bare outputs indexed by `t`, with targets from a schedule.
pub fn cost_from_outputs(
    outputs: &[DVector<f64>],
    schedule: &[SetpointChange],
    s: &DMatrix<f64>,
    t_start: usize,
    t_end: usize,
) -> Result<f64, HarnessError> {
    check_window(outputs.len(), t_start, t_end)?;
    let mut total = 0.0;
    for (t, y) in outputs.iter().enumerate().take(t_end + 1).skip(t_start) {
        let target = schedule
            .iter()
            .rev()
            .find(|c| c.start <= t)
            .ok_or_else(|| HarnessError::Config(format!("no target defined at step {t}")))?;
        total += weighted(&(y - DVector::from_row_slice(&target.y)), s);
    }
    Ok(total)
}

fn weighted(e: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    e.dot(&(s * e))
}

fn check_window(len: usize, t_start: usize, t_end: usize) -> Result<(), HarnessError> {
    if t_start > t_end || t_end >= len {
        return Err(HarnessError::CostWindow {
            t_start,
            t_end,
            len,
        });
    }
    Ok(())
}
