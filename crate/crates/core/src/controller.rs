//! Types shared by the LTI and nonlinear controllers.

use std::collections::VecDeque;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hankel::HankelError;
use crate::linalg;
use crate::qp::{QpError, QpSolution, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} holds {have} samples, {need} required")]
    NotEnoughData {
        what: &'static str,
        have: usize,
        need: usize,
    },
    #[error(
        "QP not solved ({status:?}); initial window is {init_window_distance:.3e} away from the data span"
    )]
    QpFailed {
        status: QpStatus,
        init_window_distance: f64,
    },
    #[error(transparent)]
    Data(#[from] HankelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Per-channel interval constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ControllerError> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// Same interval `[lo, hi]` on every channel.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.lower.len() != self.upper.len() {
            return Err(ControllerError::InvalidConfig(format!(
                "box bounds have lengths {} and {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| l.is_nan() || u.is_nan() || l > u)
        {
            return Err(ControllerError::InvalidConfig(
                "box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
    }

    /// Whether `inner` lies strictly inside `self` on every channel.
    pub fn strictly_contains(&self, inner: &BoxSet) -> bool {
        inner.dim() == self.dim()
            && (0..self.dim())
                .all(|i| inner.lower[i] > self.lower[i] && inner.upper[i] < self.upper[i])
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }
}

/// The last `n` applied inputs and measured outputs, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct PastWindow {
    capacity: usize,
    u: VecDeque<DVector<f64>>,
    y: VecDeque<DVector<f64>>,
}

impl PastWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            u: VecDeque::with_capacity(capacity + 1),
            y: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.u.len() == self.capacity
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.u.push_back(u);
        self.y.push_back(y);
        while self.u.len() > self.capacity {
            self.u.pop_front();
            self.y.pop_front();
        }
    }

    /// `u_[t-n, t-1]` stacked.
    pub fn u_stacked(&self) -> DVector<f64> {
        stack(&self.u)
    }

    /// `y_[t-n, t-1]` stacked.
    pub fn y_stacked(&self) -> DVector<f64> {
        stack(&self.y)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.u.iter()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.y.iter()
    }
}

pub(crate) fn stack(items: &VecDeque<DVector<f64>>) -> DVector<f64> {
    let len: usize = items.iter().map(|v| v.len()).sum();
    DVector::from_iterator(len, items.iter().flat_map(|v| v.iter().copied()))
}

/// Solver diagnostics attached to every open-loop solution.
#[derive(Debug, Clone, PartialEq)]
pub struct QpStats {
    pub status: QpStatus,
    pub iterations: usize,
    pub polish_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub n_vars: usize,
    pub n_eq: usize,
    pub solve_time: Duration,
}

impl QpStats {
    pub(crate) fn from_solution(
        s: &QpSolution,
        n_vars: usize,
        n_eq: usize,
        solve_time: Duration,
    ) -> Self {
        Self {
            status: s.status,
            iterations: s.iterations,
            polish_iterations: s.polish_iterations,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            n_vars,
            n_eq,
            solve_time,
        }
    }
}

pub(crate) fn check_weight(name: &str, w: &DMatrix<f64>, dim: usize) -> Result<(), ControllerError> {
    if w.nrows() != dim || w.ncols() != dim {
        return Err(ControllerError::InvalidConfig(format!(
            "{name} is {}x{}, expected {dim}x{dim}",
            w.nrows(),
            w.ncols()
        )));
    }
    if !linalg::is_positive_definite(w) {
        return Err(ControllerError::InvalidConfig(format!(
            "{name} must be symmetric positive definite"
        )));
    }
    Ok(())
}

/// Shifts `steps` consecutive blocks of `width` entries starting at `offset`
/// one block towards the front, repeating the final block.
pub(crate) fn shift_blocks(v: &mut DVector<f64>, offset: usize, width: usize, steps: usize) {
    if steps < 2 || width == 0 {
        return;
    }
    for k in 0..steps - 1 {
        for i in 0..width {
            v[offset + k * width + i] = v[offset + (k + 1) * width + i];
        }
    }
}

/// `min_alpha || H alpha - w ||` for the rows pinned by the initial window.
pub(crate) fn init_window_distance(h_init: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let alpha = linalg::lstsq(h_init, w, 1e-12);
    (h_init * alpha - w).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn past_window_keeps_newest() {
        let mut w = PastWindow::new(2);
        for k in 0..5 {
            w.push(DVector::from_element(1, k as f64), DVector::from_element(1, -(k as f64)));
        }
        assert!(w.is_full());
        assert_eq!(w.u_stacked().as_slice(), &[3.0, 4.0]);
        assert_eq!(w.y_stacked().as_slice(), &[-3.0, -4.0]);
    }

    #[test]
    fn box_checks() {
        let b = BoxSet::uniform(2, 0.0, 60.0);
        assert!(b.contains(&DVector::from_vec(vec![0.0, 60.0]), 0.0));
        assert!(!b.contains(&DVector::from_vec(vec![-0.1, 1.0]), 0.0));
        assert!(b.strictly_contains(&BoxSet::uniform(2, 0.6, 59.4)));
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn shifting_repeats_last_block() {
        let mut v = DVector::from_vec(vec![9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        shift_blocks(&mut v, 1, 2, 3);
        assert_eq!(v.as_slice(), &[9.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    }
}
