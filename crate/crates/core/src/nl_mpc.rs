//! Data-driven tracking MPC for nonlinear plants.
//!
//! The prediction model is rebuilt every step from the last `N` measured
//! samples, so it tracks the local linearization along the closed-loop
//! trajectory. Requiring `sum(alpha) = 1` makes the model affine, which
//! carries the operating-point offset of the data into the predictions. The
//! terminal constraint pins the last `n + 1` predicted steps to an artificial
//! equilibrium `(u_s, y_s)` that is optimized online and pulled towards the
//! target output by `|y_s - y_T|_S^2`.

use std::collections::VecDeque;
use std::ops::Range;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::controller::{
    check_weight, init_window_distance, shift_blocks, stack, BoxSet, ControllerError,
    PastWindow, QpStats,
};
use crate::hankel::{
    build_hankel, persistence_order_check, PeReport, Sequence, DEFAULT_RANK_TOLERANCE,
};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};

#[derive(Debug, Clone, PartialEq)]
pub struct NlControllerConfig {
    /// Length `N` of the sliding data window.
    pub window_len: usize,
    /// Horizon parameter `L`; predictions cover `k = 0..=L`.
    pub horizon: usize,
    /// Assumed order `n`.
    pub order: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub lambda_alpha: f64,
    pub lambda_sigma: f64,
    pub y_target: DVector<f64>,
    pub input_box: BoxSet,
    /// Admissible artificial equilibrium inputs; must lie inside `input_box`.
    pub setpoint_box: BoxSet,
    /// When false the window is filled once and then frozen.
    pub update_data: bool,
    pub qp: QpSettings,
}

impl NlControllerConfig {
    pub fn n_inputs(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.q.nrows()
    }

    /// Hankel depth `L + n + 1`.
    pub fn depth(&self) -> usize {
        self.horizon + self.order + 1
    }

    /// Samples needed for persistency of excitation of order `L + n + 1`.
    pub fn min_window_len(&self) -> usize {
        (self.n_inputs() + 1) * self.depth() - 1
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let (m, p) = (self.n_inputs(), self.n_outputs());
        let invalid = |msg: String| Err(ControllerError::InvalidConfig(msg));
        if self.order == 0 || m == 0 || p == 0 {
            return invalid("order and channel counts must be positive".into());
        }
        if self.horizon < self.order {
            return invalid(format!(
                "horizon {} shorter than order {}",
                self.horizon, self.order
            ));
        }
        if self.window_len < self.depth() {
            return invalid(format!(
                "window length {} below the Hankel depth {}",
                self.window_len,
                self.depth()
            ));
        }
        check_weight("Q", &self.q, p)?;
        check_weight("R", &self.r, m)?;
        check_weight("S", &self.s, p)?;
        if self.y_target.len() != p {
            return invalid("target dimension does not match Q".into());
        }
        if !(self.lambda_alpha > 0.0 && self.lambda_sigma > 0.0) {
            return invalid("lambda_alpha and lambda_sigma must be positive".into());
        }
        self.input_box.validate()?;
        self.setpoint_box.validate()?;
        if self.input_box.dim() != m || !self.input_box.strictly_contains(&self.setpoint_box) {
            return invalid("setpoint box must lie strictly inside the input box".into());
        }
        Ok(())
    }
}

/// The last `N` input-output pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    capacity: usize,
    u: VecDeque<DVector<f64>>,
    y: VecDeque<DVector<f64>>,
}

impl SlidingWindow {
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

    /// Appends a pair, evicting the oldest once full.
    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.u.push_back(u);
        self.y.push_back(y);
        if self.u.len() > self.capacity {
            self.u.pop_front();
            self.y.pop_front();
        }
    }

    pub fn inputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.u.iter()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.y.iter()
    }

    pub fn u_sequence(&self) -> Result<Sequence, ControllerError> {
        Ok(Sequence::from_stacked(&stack(&self.u), self.dim_of(&self.u))?)
    }

    pub fn y_sequence(&self) -> Result<Sequence, ControllerError> {
        Ok(Sequence::from_stacked(&stack(&self.y), self.dim_of(&self.y))?)
    }

    fn dim_of(&self, v: &VecDeque<DVector<f64>>) -> usize {
        v.front().map_or(0, |x| x.len())
    }
}

/// Block positions in `(alpha, sigma, u, y, u_s, y_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlLayout {
    pub n_alpha: usize,
    pub m: usize,
    pub p: usize,
    pub order: usize,
    pub horizon: usize,
}

impl NlLayout {
    /// `L + n + 1` predicted steps, `k = -n..=L`.
    pub fn steps(&self) -> usize {
        self.horizon + self.order + 1
    }

    pub fn alpha(&self) -> Range<usize> {
        0..self.n_alpha
    }

    pub fn sigma(&self) -> Range<usize> {
        self.n_alpha..self.n_alpha + self.p * self.steps()
    }

    pub fn u(&self, k: isize) -> Range<usize> {
        let start = self.sigma().end + self.step(k) * self.m;
        start..start + self.m
    }

    pub fn y(&self, k: isize) -> Range<usize> {
        let start = self.sigma().end + self.m * self.steps() + self.step(k) * self.p;
        start..start + self.p
    }

    pub fn u_s(&self) -> Range<usize> {
        let start = self.sigma().end + (self.m + self.p) * self.steps();
        start..start + self.m
    }

    pub fn y_s(&self) -> Range<usize> {
        let start = self.u_s().end;
        start..start + self.p
    }

    pub fn n_vars(&self) -> usize {
        self.y_s().end
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
pub struct AssembledNlQp {
    pub problem: QpProblem,
    pub layout: NlLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlOpenLoopSolution {
    /// `u_bar_k` for `k = 0..=L`.
    pub u_bar: Vec<DVector<f64>>,
    pub y_bar: Vec<DVector<f64>>,
    pub alpha: DVector<f64>,
    pub sigma: DVector<f64>,
    pub u_s_art: DVector<f64>,
    pub y_s_art: DVector<f64>,
    pub objective: f64,
    pub qp_stats: QpStats,
}

/// PE report of the window inputs at `order`.
pub fn pe_advisory(window: &SlidingWindow, order: usize) -> Result<PeReport, ControllerError> {
    let u = window.u_sequence()?;
    Ok(persistence_order_check(&u, order, DEFAULT_RANK_TOLERANCE)?)
}

pub fn assemble_nl_qp(
    cfg: &NlControllerConfig,
    window: &SlidingWindow,
    past: &PastWindow,
) -> Result<AssembledNlQp, ControllerError> {
    cfg.validate()?;
    let (hu, hy) = window_hankels(cfg, window)?;
    assemble_from_hankels(cfg, &hu, &hy, past)
}

fn window_hankels(
    cfg: &NlControllerConfig,
    window: &SlidingWindow,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ControllerError> {
    if window.len() < cfg.window_len || window.is_empty() {
        return Err(ControllerError::NotEnoughData {
            what: "data window",
            have: window.len(),
            need: cfg.window_len,
        });
    }
    let (u, y) = (window.u_sequence()?, window.y_sequence()?);
    if u.dim() != cfg.n_inputs() || y.dim() != cfg.n_outputs() {
        return Err(ControllerError::InvalidConfig(
            "window channels do not match Q and R".into(),
        ));
    }
    Ok((
        build_hankel(&u, cfg.depth())?.into_matrix(),
        build_hankel(&y, cfg.depth())?.into_matrix(),
    ))
}

fn assemble_from_hankels(
    cfg: &NlControllerConfig,
    hu: &DMatrix<f64>,
    hy: &DMatrix<f64>,
    past: &PastWindow,
) -> Result<AssembledNlQp, ControllerError> {
    let (m, p, n, l) = (cfg.n_inputs(), cfg.n_outputs(), cfg.order, cfg.horizon);
    if !past.is_full() || past.capacity() != n {
        return Err(ControllerError::NotEnoughData {
            what: "past window",
            have: past.len(),
            need: n,
        });
    }
    let layout = NlLayout {
        n_alpha: hu.ncols(),
        m,
        p,
        order: n,
        horizon: l,
    };
    let steps = layout.steps();
    let nv = layout.n_vars();
    let n_eq = (m + p) * steps + (m + p) * n + (m + p) * (n + 1) + 1;
    let mut a = DMatrix::zeros(n_eq, nv);
    let mut b = DVector::zeros(n_eq);

    let u0 = layout.u(-(n as isize)).start;
    let y0 = layout.y(-(n as isize)).start;
    let s0 = layout.sigma().start;
    for r in 0..m * steps {
        a[(r, u0 + r)] = 1.0;
        for j in 0..layout.n_alpha {
            a[(r, j)] = -hu[(r, j)];
        }
    }
    for r in 0..p * steps {
        let row = m * steps + r;
        a[(row, y0 + r)] = 1.0;
        a[(row, s0 + r)] = 1.0;
        for j in 0..layout.n_alpha {
            a[(row, j)] = -hy[(r, j)];
        }
    }
    let mut row = (m + p) * steps;
    for (k, (u, y)) in past.inputs().zip(past.outputs()).enumerate() {
        let k = k as isize - n as isize;
        for (idx, v) in [(layout.u(k), u), (layout.y(k), y)] {
            for (i, val) in idx.zip(v.iter()) {
                a[(row, i)] = 1.0;
                b[row] = *val;
                row += 1;
            }
        }
    }
    for k in (l - n)..=l {
        let k = k as isize;
        for (idx, art) in [(layout.u(k), layout.u_s()), (layout.y(k), layout.y_s())] {
            for (i, j) in idx.zip(art) {
                a[(row, i)] = 1.0;
                a[(row, j)] = -1.0;
                row += 1;
            }
        }
    }
    for j in layout.alpha() {
        a[(row, j)] = 1.0;
    }
    b[row] = 1.0;

    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    let (r2, q2, s2) = (&cfg.r * 2.0, &cfg.q * 2.0, &cfg.s * 2.0);
    let (us, ys) = (layout.u_s().start, layout.y_s().start);
    let add = |h: &mut DMatrix<f64>, i: usize, j: usize, w: &DMatrix<f64>, sign: f64| {
        let mut v = h.view_mut((i, j), (w.nrows(), w.ncols()));
        v += w * sign;
    };
    for k in 0..=l as isize {
        let (iu, iy) = (layout.u(k).start, layout.y(k).start);
        // |u_k - u_s|_R^2 and |y_k - y_s|_Q^2
        add(&mut h, iu, iu, &r2, 1.0);
        add(&mut h, iu, us, &r2, -1.0);
        add(&mut h, us, iu, &r2, -1.0);
        add(&mut h, us, us, &r2, 1.0);
        add(&mut h, iy, iy, &q2, 1.0);
        add(&mut h, iy, ys, &q2, -1.0);
        add(&mut h, ys, iy, &q2, -1.0);
        add(&mut h, ys, ys, &q2, 1.0);
    }
    add(&mut h, ys, ys, &s2, 1.0);
    f.rows_mut(ys, p).copy_from(&(&cfg.s * &cfg.y_target * -2.0));
    for i in layout.alpha() {
        h[(i, i)] += 2.0 * cfg.lambda_alpha;
    }
    for i in layout.sigma() {
        h[(i, i)] += 2.0 * cfg.lambda_sigma;
    }

    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for k in 0..=l as isize {
        for (c, i) in layout.u(k).enumerate() {
            lower[i] = cfg.input_box.lower[c];
            upper[i] = cfg.input_box.upper[c];
        }
    }
    for (c, i) in layout.u_s().enumerate() {
        lower[i] = cfg.setpoint_box.lower[c];
        upper[i] = cfg.setpoint_box.upper[c];
    }
    let offset = cfg.y_target.dot(&(&cfg.s * &cfg.y_target));
    let problem = QpProblem::new(h, f, a, b, lower, upper)?.with_offset(offset);
    Ok(AssembledNlQp { problem, layout })
}

/// Receding-horizon controller with an online data window.
#[derive(Debug, Clone)]
pub struct NlController {
    cfg: NlControllerConfig,
    window: SlidingWindow,
    past: PastWindow,
    frozen: Option<(DMatrix<f64>, DMatrix<f64>)>,
    previous: Option<(QpSolution, NlLayout)>,
    last: Option<NlOpenLoopSolution>,
    last_pe: Option<PeReport>,
}

impl NlController {
    pub fn new(cfg: NlControllerConfig) -> Result<Self, ControllerError> {
        cfg.validate()?;
        if cfg.window_len < cfg.min_window_len() {
            warn!(
                "window length {} cannot be persistently exciting of order {} (needs {})",
                cfg.window_len,
                cfg.depth(),
                cfg.min_window_len()
            );
        }
        Ok(Self {
            window: SlidingWindow::new(cfg.window_len),
            past: PastWindow::new(cfg.order),
            cfg,
            frozen: None,
            previous: None,
            last: None,
            last_pe: None,
        })
    }

    pub fn config(&self) -> &NlControllerConfig {
        &self.cfg
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn past(&self) -> &PastWindow {
        &self.past
    }

    pub fn last_solution(&self) -> Option<&NlOpenLoopSolution> {
        self.last.as_ref()
    }

    /// Advisory computed at the most recent solve.
    pub fn last_pe(&self) -> Option<&PeReport> {
        self.last_pe.as_ref()
    }

    pub fn is_ready(&self) -> bool {
        self.window.is_full() && self.past.is_full()
    }

    /// Records an applied input and the measurement taken with it.
    ///
    /// With `update_data` off, the window stops changing once it is full.
    pub fn observe(&mut self, u: DVector<f64>, y: DVector<f64>) {
        if self.cfg.update_data || !self.window.is_full() {
            self.window.push(u.clone(), y.clone());
        }
        self.past.push(u, y);
    }

    pub fn set_target(&mut self, y_target: DVector<f64>) -> Result<(), ControllerError> {
        if y_target.len() != self.cfg.n_outputs() {
            return Err(ControllerError::InvalidConfig(
                "target dimension does not match Q".into(),
            ));
        }
        self.cfg.y_target = y_target;
        Ok(())
    }

    pub fn assemble(&mut self) -> Result<AssembledNlQp, ControllerError> {
        let (hu, hy) = match (&self.frozen, self.cfg.update_data) {
            (Some(h), false) => h.clone(),
            _ => {
                let h = window_hankels(&self.cfg, &self.window)?;
                if !self.cfg.update_data {
                    self.frozen = Some(h.clone());
                }
                h
            }
        };
        assemble_from_hankels(&self.cfg, &hu, &hy, &self.past)
    }

    /// Solves the open-loop problem for the current window.
    ///
    /// Hitting the iteration limit is not an error: the best iterate is
    /// returned with its status so the loop can keep running.
    pub fn solve(&mut self) -> Result<NlOpenLoopSolution, ControllerError> {
        let pe = pe_advisory(&self.window, self.cfg.depth())?;
        debug!(
            "window PE order {}: rank {}/{}, smallest sv {:.3e}",
            pe.order, pe.computed_rank, pe.required_rank, pe.smallest_retained_singular_value
        );
        self.last_pe = Some(pe);

        let AssembledNlQp { problem, layout } = self.assemble()?;
        let shift_alpha = self.cfg.update_data;
        let warm = self
            .previous
            .as_ref()
            .filter(|(_, l)| *l == layout)
            .map(|(s, l)| shifted_warm_start(s, l, shift_alpha));
        let started = Instant::now();
        let sol = qp::solve_warm(&problem, &self.cfg.qp, warm.as_ref());
        let stats =
            QpStats::from_solution(&sol, problem.n_vars(), problem.n_eq(), started.elapsed());
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::MaxIterations => warn!(
                "QP hit the iteration limit (primal {:.2e}, dual {:.2e}); using best iterate",
                sol.primal_residual, sol.dual_residual
            ),
            QpStatus::PrimalInfeasible => {
                self.previous = None;
                return Err(self.failure(&layout, sol.status));
            }
        }
        let l = layout.horizon as isize;
        let out = NlOpenLoopSolution {
            u_bar: (0..=l).map(|k| sol.z.rows_range(layout.u(k)).into_owned()).collect(),
            y_bar: (0..=l).map(|k| sol.z.rows_range(layout.y(k)).into_owned()).collect(),
            alpha: sol.z.rows_range(layout.alpha()).into_owned(),
            sigma: sol.z.rows_range(layout.sigma()).into_owned(),
            u_s_art: sol.z.rows_range(layout.u_s()).into_owned(),
            y_s_art: sol.z.rows_range(layout.y_s()).into_owned(),
            objective: sol.objective,
            qp_stats: stats,
        };
        self.previous = Some((sol, layout));
        self.last = Some(out.clone());
        Ok(out)
    }

    /// Records `(u_prev, y_prev)`, re-solves and returns `u_bar_0`, clipped
    /// to the input box in case the solver stopped early.
    pub fn step(&mut self, u_prev: DVector<f64>, y_prev: DVector<f64>) -> Result<DVector<f64>, ControllerError> {
        self.observe(u_prev, y_prev);
        self.next_input()
    }

    /// Solves for the current data without recording anything.
    pub fn next_input(&mut self) -> Result<DVector<f64>, ControllerError> {
        let sol = self.solve()?;
        Ok(self.cfg.input_box.clamp(&sol.u_bar[0]))
    }

    fn failure(&self, layout: &NlLayout, status: QpStatus) -> ControllerError {
        let Some((hu, hy)) = self.frozen.clone().or_else(|| window_hankels(&self.cfg, &self.window).ok())
        else {
            return ControllerError::QpFailed {
                status,
                init_window_distance: f64::NAN,
            };
        };
        let (m, p, n) = (layout.m, layout.p, layout.order);
        // Initial-window rows plus the affine constraint.
        let mut h_init = DMatrix::zeros((m + p) * n + 1, hu.ncols());
        h_init.rows_mut(0, m * n).copy_from(&hu.rows(0, m * n));
        h_init.rows_mut(m * n, p * n).copy_from(&hy.rows(0, p * n));
        h_init.row_mut((m + p) * n).fill(1.0);
        let w = DVector::from_iterator(
            (m + p) * n + 1,
            self.past
                .u_stacked()
                .iter()
                .chain(self.past.y_stacked().iter())
                .copied()
                .chain(std::iter::once(1.0)),
        );
        ControllerError::QpFailed {
            status,
            init_window_distance: init_window_distance(&h_init, &w),
        }
    }
}

/// Moves the previous solution one step forward. When the data window slid by
/// one sample, Hankel column `j + 1` of the old window is column `j` of the new
/// one, so `alpha` shifts as well.
fn shifted_warm_start(prev: &QpSolution, layout: &NlLayout, shift_alpha: bool) -> WarmStart {
    let mut z = prev.z.clone();
    let mut mu = prev.box_multipliers.clone();
    let mut lam = prev.eq_multipliers.clone();
    let steps = layout.steps();
    let (m, p) = (layout.m, layout.p);
    let u0 = layout.u(-(layout.order as isize)).start;
    let y0 = layout.y(-(layout.order as isize)).start;
    for v in [&mut z, &mut mu] {
        if shift_alpha {
            shift_blocks(v, 0, 1, layout.n_alpha);
        }
        shift_blocks(v, layout.sigma().start, p, steps);
        shift_blocks(v, u0, m, steps);
        shift_blocks(v, y0, p, steps);
    }
    shift_blocks(&mut lam, 0, m, steps);
    shift_blocks(&mut lam, m * steps, p, steps);
    WarmStart {
        z,
        eq_multipliers: lam,
        box_multipliers: mu,
    }
}
