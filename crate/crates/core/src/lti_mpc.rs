//! Nominal and robust data-driven MPC for linear plants.
//!
//! Both controllers predict with `H_{L+n}` of a fixed, offline-recorded
//! trajectory: any `alpha` yields a candidate trajectory
//! `(H_u alpha, H_y alpha)` of length `L + n`. The first `n` steps are pinned
//! to the most recent measurements (this fixes the internal state), the last
//! `n` steps to the setpoint.
//!
//! The robust variant adds a slack `sigma` on all predicted outputs and the
//! regularizers `lambda_alpha * eps_bar * |alpha|^2` and
//! `lambda_sigma / eps_bar * |sigma|^2`, drops output constraints and applies
//! `n` inputs per solve.

use std::collections::VecDeque;
use std::ops::Range;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::controller::{
    check_weight, init_window_distance, shift_blocks, BoxSet, ControllerError, PastWindow,
    QpStats,
};
use crate::hankel::{
    build_hankel, persistence_order_check, PeReport, Sequence, DEFAULT_RANK_TOLERANCE,
};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// One solve per step, terminal equality, optional output box.
    Nominal,
    /// Slack and regularized weights, `n` inputs applied per solve.
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiControllerConfig {
    /// Prediction horizon `L`.
    pub horizon: usize,
    /// Upper bound `n` on the system order; length of the initial window.
    pub order: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_setpoint: DVector<f64>,
    pub y_setpoint: DVector<f64>,
    pub input_box: BoxSet,
    /// Ignored by the robust scheme.
    pub output_box: BoxSet,
    pub lambda_alpha: f64,
    pub lambda_sigma: f64,
    pub eps_bar: f64,
    pub qp: QpSettings,
}

impl LtiControllerConfig {
    /// Identity weights, zero setpoints, no constraints.
    pub fn new(horizon: usize, order: usize, m: usize, p: usize) -> Self {
        Self {
            horizon,
            order,
            q: DMatrix::identity(p, p),
            r: DMatrix::identity(m, m),
            u_setpoint: DVector::zeros(m),
            y_setpoint: DVector::zeros(p),
            input_box: BoxSet::unbounded(m),
            output_box: BoxSet::unbounded(p),
            lambda_alpha: 1e-3,
            lambda_sigma: 1e3,
            eps_bar: 0.0,
            qp: QpSettings::default(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.q.nrows()
    }

    /// Samples needed for `u` to be persistently exciting of order `L + 2n`.
    pub fn min_data_length(&self) -> usize {
        (self.n_inputs() + 1) * (self.horizon + 2 * self.order) - 1
    }

    pub fn validate(&self, scheme: Scheme) -> Result<(), ControllerError> {
        let (m, p) = (self.n_inputs(), self.n_outputs());
        let invalid = |msg: String| Err(ControllerError::InvalidConfig(msg));
        if self.order == 0 || m == 0 || p == 0 {
            return invalid("order and channel counts must be positive".into());
        }
        let min_horizon = match scheme {
            Scheme::Nominal => self.order,
            Scheme::Robust => 2 * self.order,
        };
        if self.horizon < min_horizon {
            return invalid(format!(
                "horizon {} below the minimum {min_horizon} for {scheme:?}",
                self.horizon
            ));
        }
        check_weight("Q", &self.q, p)?;
        check_weight("R", &self.r, m)?;
        if self.u_setpoint.len() != m || self.y_setpoint.len() != p {
            return invalid("setpoint dimensions do not match Q and R".into());
        }
        self.input_box.validate()?;
        self.output_box.validate()?;
        if self.input_box.dim() != m || self.output_box.dim() != p {
            return invalid("box dimensions do not match Q and R".into());
        }
        if scheme == Scheme::Robust
            && !(self.eps_bar > 0.0 && self.lambda_alpha > 0.0 && self.lambda_sigma > 0.0)
        {
            return invalid("robust scheme needs eps_bar, lambda_alpha, lambda_sigma > 0".into());
        }
        Ok(())
    }
}

/// Offline input-output trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBuffer {
    pub u: Sequence,
    pub y: Sequence,
}

impl DataBuffer {
    pub fn new(u: Sequence, y: Sequence) -> Result<Self, ControllerError> {
        if u.len() != y.len() {
            return Err(ControllerError::InvalidConfig(format!(
                "input data has {} samples, output data {}",
                u.len(),
                y.len()
            )));
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Position of each block inside the decision vector `(alpha, sigma, u, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LtiLayout {
    pub n_alpha: usize,
    pub n_sigma: usize,
    pub m: usize,
    pub p: usize,
    pub order: usize,
    pub horizon: usize,
}

impl LtiLayout {
    /// Predicted steps including the initial window.
    pub fn steps(&self) -> usize {
        self.horizon + self.order
    }

    pub fn alpha(&self) -> Range<usize> {
        0..self.n_alpha
    }

    pub fn sigma(&self) -> Range<usize> {
        self.n_alpha..self.n_alpha + self.n_sigma
    }

    fn u_offset(&self) -> usize {
        self.n_alpha + self.n_sigma
    }

    fn y_offset(&self) -> usize {
        self.u_offset() + self.m * self.steps()
    }

    /// Indices of `u_bar_k` for `k` in `[-n, L-1]`.
    pub fn u(&self, k: isize) -> Range<usize> {
        let s = self.step(k);
        let start = self.u_offset() + s * self.m;
        start..start + self.m
    }

    /// Indices of `y_bar_k` for `k` in `[-n, L-1]`.
    pub fn y(&self, k: isize) -> Range<usize> {
        let s = self.step(k);
        let start = self.y_offset() + s * self.p;
        start..start + self.p
    }

    pub fn n_vars(&self) -> usize {
        self.y_offset() + self.p * self.steps()
    }

    fn step(&self, k: isize) -> usize {
        let s = k + self.order as isize;
        assert!(
            s >= 0 && (s as usize) < self.steps(),
            "step {k} outside the prediction window"
        );
        s as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledQp {
    pub problem: QpProblem,
    pub layout: LtiLayout,
}

/// Optimal open-loop prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSolution {
    /// `u_bar_k` for `k` in `[0, L-1]`.
    pub u_bar: Vec<DVector<f64>>,
    /// `y_bar_k` for `k` in `[0, L-1]`.
    pub y_bar: Vec<DVector<f64>>,
    pub alpha: DVector<f64>,
    /// Zero for the nominal scheme.
    pub sigma: DVector<f64>,
    pub objective: f64,
    pub qp_stats: QpStats,
}

pub fn assemble_nominal_qp(
    cfg: &LtiControllerConfig,
    data: &DataBuffer,
    past: &PastWindow,
) -> Result<AssembledQp, ControllerError> {
    assemble(cfg, Scheme::Nominal, data, past)
}

pub fn assemble_robust_qp(
    cfg: &LtiControllerConfig,
    data: &DataBuffer,
    past: &PastWindow,
) -> Result<AssembledQp, ControllerError> {
    assemble(cfg, Scheme::Robust, data, past)
}

fn assemble(
    cfg: &LtiControllerConfig,
    scheme: Scheme,
    data: &DataBuffer,
    past: &PastWindow,
) -> Result<AssembledQp, ControllerError> {
    cfg.validate(scheme)?;
    let (hu, hy) = data_hankels(cfg, data)?;
    assemble_from_hankels(cfg, scheme, &hu, &hy, past)
}

fn data_hankels(
    cfg: &LtiControllerConfig,
    data: &DataBuffer,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ControllerError> {
    if data.u.dim() != cfg.n_inputs() || data.y.dim() != cfg.n_outputs() {
        return Err(ControllerError::InvalidConfig(
            "data channels do not match Q and R".into(),
        ));
    }
    let depth = cfg.horizon + cfg.order;
    if data.len() < depth {
        return Err(ControllerError::NotEnoughData {
            what: "data buffer",
            have: data.len(),
            need: depth,
        });
    }
    Ok((
        build_hankel(&data.u, depth)?.into_matrix(),
        build_hankel(&data.y, depth)?.into_matrix(),
    ))
}

fn assemble_from_hankels(
    cfg: &LtiControllerConfig,
    scheme: Scheme,
    hu: &DMatrix<f64>,
    hy: &DMatrix<f64>,
    past: &PastWindow,
) -> Result<AssembledQp, ControllerError> {
    let (m, p, n, l) = (cfg.n_inputs(), cfg.n_outputs(), cfg.order, cfg.horizon);
    if !past.is_full() || past.capacity() != n {
        return Err(ControllerError::NotEnoughData {
            what: "past window",
            have: past.len(),
            need: n,
        });
    }
    let robust = scheme == Scheme::Robust;
    let steps = l + n;
    let layout = LtiLayout {
        n_alpha: hu.ncols(),
        n_sigma: if robust { p * steps } else { 0 },
        m,
        p,
        order: n,
        horizon: l,
    };
    let nv = layout.n_vars();
    let n_eq = (m + p) * steps + 2 * (m + p) * n;
    let mut a = DMatrix::zeros(n_eq, nv);
    let mut b = DVector::zeros(n_eq);

    // Data equation.
    let u0 = layout.u(-(n as isize)).start;
    let y0 = layout.y(-(n as isize)).start;
    for r in 0..m * steps {
        a[(r, u0 + r)] = 1.0;
        for j in 0..layout.n_alpha {
            a[(r, j)] = -hu[(r, j)];
        }
    }
    for r in 0..p * steps {
        let row = m * steps + r;
        a[(row, y0 + r)] = 1.0;
        if robust {
            a[(row, layout.sigma().start + r)] = 1.0;
        }
        for j in 0..layout.n_alpha {
            a[(row, j)] = -hy[(r, j)];
        }
    }

    // Initial window and terminal equality.
    let mut row = (m + p) * steps;
    let mut pin = |a: &mut DMatrix<f64>, b: &mut DVector<f64>, idx: Range<usize>, v: &[f64]| {
        for (i, &val) in idx.zip(v) {
            a[(row, i)] = 1.0;
            b[row] = val;
            row += 1;
        }
    };
    for (k, (u, y)) in past.inputs().zip(past.outputs()).enumerate() {
        let k = k as isize - n as isize;
        pin(&mut a, &mut b, layout.u(k), u.as_slice());
        pin(&mut a, &mut b, layout.y(k), y.as_slice());
    }
    for k in (l - n)..l {
        let k = k as isize;
        pin(&mut a, &mut b, layout.u(k), cfg.u_setpoint.as_slice());
        pin(&mut a, &mut b, layout.y(k), cfg.y_setpoint.as_slice());
    }

    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    let ru = &cfg.r * &cfg.u_setpoint;
    let qy = &cfg.q * &cfg.y_setpoint;
    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for k in 0..l as isize {
        let (iu, iy) = (layout.u(k), layout.y(k));
        h.view_mut((iu.start, iu.start), (m, m)).copy_from(&(&cfg.r * 2.0));
        h.view_mut((iy.start, iy.start), (p, p)).copy_from(&(&cfg.q * 2.0));
        f.rows_mut(iu.start, m).copy_from(&(&ru * -2.0));
        f.rows_mut(iy.start, p).copy_from(&(&qy * -2.0));
        for i in 0..m {
            lower[iu.start + i] = cfg.input_box.lower[i];
            upper[iu.start + i] = cfg.input_box.upper[i];
        }
        if !robust {
            for i in 0..p {
                lower[iy.start + i] = cfg.output_box.lower[i];
                upper[iy.start + i] = cfg.output_box.upper[i];
            }
        }
    }
    if robust {
        let wa = 2.0 * cfg.lambda_alpha * cfg.eps_bar;
        let ws = 2.0 * cfg.lambda_sigma / cfg.eps_bar;
        for i in layout.alpha() {
            h[(i, i)] += wa;
        }
        for i in layout.sigma() {
            h[(i, i)] += ws;
        }
    }
    let offset = l as f64 * (cfg.u_setpoint.dot(&ru) + cfg.y_setpoint.dot(&qy));
    let problem = QpProblem::new(h, f, a, b, lower, upper)?.with_offset(offset);
    Ok(AssembledQp { problem, layout })
}

/// Receding-horizon controller for either scheme.
#[derive(Debug, Clone)]
pub struct LtiController {
    cfg: LtiControllerConfig,
    scheme: Scheme,
    hu: DMatrix<f64>,
    hy: DMatrix<f64>,
    past: PastWindow,
    pe: PeReport,
    plan: VecDeque<DVector<f64>>,
    previous: Option<(QpSolution, LtiLayout)>,
    last: Option<OpenLoopSolution>,
}

impl LtiController {
    pub fn new(
        cfg: LtiControllerConfig,
        scheme: Scheme,
        data: &DataBuffer,
    ) -> Result<Self, ControllerError> {
        cfg.validate(scheme)?;
        let (hu, hy) = data_hankels(&cfg, data)?;
        let pe_order = cfg.horizon + 2 * cfg.order;
        let pe = persistence_order_check(&data.u, pe_order, DEFAULT_RANK_TOLERANCE)?;
        if !pe.is_pe {
            warn!(
                "input data is not persistently exciting of order {pe_order}: {}",
                pe.reason.as_deref().unwrap_or("rank deficient")
            );
        }
        Ok(Self {
            past: PastWindow::new(cfg.order),
            cfg,
            scheme,
            hu,
            hy,
            pe,
            plan: VecDeque::new(),
            previous: None,
            last: None,
        })
    }

    pub fn nominal(cfg: LtiControllerConfig, data: &DataBuffer) -> Result<Self, ControllerError> {
        Self::new(cfg, Scheme::Nominal, data)
    }

    pub fn robust(cfg: LtiControllerConfig, data: &DataBuffer) -> Result<Self, ControllerError> {
        Self::new(cfg, Scheme::Robust, data)
    }

    pub fn config(&self) -> &LtiControllerConfig {
        &self.cfg
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn past(&self) -> &PastWindow {
        &self.past
    }

    /// PE check of the data at order `L + 2n`, made at construction.
    pub fn pe_report(&self) -> &PeReport {
        &self.pe
    }

    pub fn last_solution(&self) -> Option<&OpenLoopSolution> {
        self.last.as_ref()
    }

    /// Inputs still queued from the last robust solve.
    pub fn pending_inputs(&self) -> usize {
        self.plan.len()
    }

    /// Records an applied input and the output measured with it.
    pub fn observe(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.past.push(u, y);
    }

    pub fn set_setpoint(&mut self, u_s: DVector<f64>, y_s: DVector<f64>) -> Result<(), ControllerError> {
        let mut cfg = self.cfg.clone();
        cfg.u_setpoint = u_s;
        cfg.y_setpoint = y_s;
        cfg.validate(self.scheme)?;
        self.cfg = cfg;
        self.plan.clear();
        self.previous = None;
        Ok(())
    }

    /// Builds the QP for the current past window.
    pub fn assemble(&self) -> Result<AssembledQp, ControllerError> {
        assemble_from_hankels(&self.cfg, self.scheme, &self.hu, &self.hy, &self.past)
    }

    /// Solves the open-loop problem for the current past window.
    pub fn solve(&mut self) -> Result<OpenLoopSolution, ControllerError> {
        let AssembledQp { problem, layout } = self.assemble()?;
        let warm = self
            .previous
            .as_ref()
            .filter(|(_, l)| *l == layout)
            .map(|(s, l)| shifted_warm_start(s, l, self.shift_per_solve()));
        let started = Instant::now();
        let sol = qp::solve_warm(&problem, &self.cfg.qp, warm.as_ref());
        let stats = QpStats::from_solution(&sol, problem.n_vars(), problem.n_eq(), started.elapsed());
        debug!(
            "lti solve: {:?}, {} admm / {} polish iterations",
            sol.status, sol.iterations, sol.polish_iterations
        );
        if sol.status != QpStatus::Optimal {
            self.previous = None;
            return Err(self.failure(sol.status));
        }
        let out = OpenLoopSolution {
            u_bar: (0..layout.horizon as isize)
                .map(|k| sol.z.rows_range(layout.u(k)).into_owned())
                .collect(),
            y_bar: (0..layout.horizon as isize)
                .map(|k| sol.z.rows_range(layout.y(k)).into_owned())
                .collect(),
            alpha: sol.z.rows_range(layout.alpha()).into_owned(),
            sigma: if layout.n_sigma > 0 {
                sol.z.rows_range(layout.sigma()).into_owned()
            } else {
                DVector::zeros(layout.p * layout.steps())
            },
            objective: sol.objective,
            qp_stats: stats,
        };
        self.previous = Some((sol, layout));
        self.last = Some(out.clone());
        Ok(out)
    }

    /// Records `(u_prev, y_prev)` and returns the next input.
    ///
    /// The nominal scheme solves every call. The robust scheme solves when
    /// its queue is empty and then hands out `n` inputs open loop.
    pub fn step(&mut self, u_prev: DVector<f64>, y_prev: DVector<f64>) -> Result<DVector<f64>, ControllerError> {
        self.observe(u_prev, y_prev);
        self.next_input()
    }

    /// Next input for the current past window, without recording anything.
    pub fn next_input(&mut self) -> Result<DVector<f64>, ControllerError> {
        if let Some(u) = self.plan.pop_front() {
            return Ok(u);
        }
        let sol = self.solve()?;
        let applied = match self.scheme {
            Scheme::Nominal => 1,
            Scheme::Robust => self.cfg.order,
        };
        self.plan.extend(sol.u_bar.into_iter().take(applied));
        Ok(self.plan.pop_front().expect("horizon is at least one step"))
    }

    fn shift_per_solve(&self) -> usize {
        match self.scheme {
            Scheme::Nominal => 1,
            Scheme::Robust => self.cfg.order,
        }
    }

    fn failure(&self, status: QpStatus) -> ControllerError {
        let n = self.cfg.order;
        let (m, p) = (self.cfg.n_inputs(), self.cfg.n_outputs());
        let mut h_init = DMatrix::zeros((m + p) * n, self.hu.ncols());
        h_init.rows_mut(0, m * n).copy_from(&self.hu.rows(0, m * n));
        h_init.rows_mut(m * n, p * n).copy_from(&self.hy.rows(0, p * n));
        let w = DVector::from_iterator(
            (m + p) * n,
            self.past
                .u_stacked()
                .iter()
                .chain(self.past.y_stacked().iter())
                .copied(),
        );
        ControllerError::QpFailed {
            status,
            init_window_distance: init_window_distance(&h_init, &w),
        }
    }
}

/// Previous solution moved `shift` steps along the prediction window.
fn shifted_warm_start(prev: &QpSolution, layout: &LtiLayout, shift: usize) -> WarmStart {
    let mut z = prev.z.clone();
    let mut mu = prev.box_multipliers.clone();
    let mut lam = prev.eq_multipliers.clone();
    let steps = layout.steps();
    let (m, p) = (layout.m, layout.p);
    let u0 = layout.u(-(layout.order as isize)).start;
    let y0 = layout.y(-(layout.order as isize)).start;
    for _ in 0..shift {
        for v in [&mut z, &mut mu] {
            shift_blocks(v, u0, m, steps);
            shift_blocks(v, y0, p, steps);
            if layout.n_sigma > 0 {
                shift_blocks(v, layout.sigma().start, p, steps);
            }
        }
        shift_blocks(&mut lam, 0, m, steps);
        shift_blocks(&mut lam, m * steps, p, steps);
    }
    WarmStart {
        z,
        eq_multipliers: lam,
        box_multipliers: mu,
    }
}
