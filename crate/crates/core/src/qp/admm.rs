//! Operator-splitting iteration.
//!
//! Constraint rows are `[A_eq; E]`, where `E` selects every variable with at
//! least one finite bound. The linear system of each iteration,
//! `(H + sigma I + rho_eq A'A + rho_box E'E) x = rhs`, is factored once per
//! step-size change.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::polish::{self, BoundState};
use super::{QpProblem, QpSettings, QpSolution, QpStatus, Tolerances, WarmStart};
use crate::linalg::inf_norm;

/// Step size on equality rows relative to the bound rows.
const EQ_RHO_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const ADAPT_EVERY: usize = 50;
/// Polishing starts once residuals are within this factor of tolerance.
const POLISH_TRIGGER: f64 = 1e4;

pub fn solve(p: &QpProblem, settings: &QpSettings) -> QpSolution {
    solve_warm(p, settings, None)
}

pub fn solve_warm(p: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> QpSolution {
    let n = p.n_vars();
    let me = p.n_eq();
    let warm = warm.filter(|w| {
        w.z.len() == n && w.eq_multipliers.len() == me && w.box_multipliers.len() == n
    });

    let mut polish_iterations = 0;
    if settings.polish {
        let states = match warm {
            Some(w) => polish::states_from_warm(p, &w.z, &w.box_multipliers),
            None => polish::initial_states(p),
        };
        match polish::active_set_polish(p, settings, states) {
            Ok((pol, steps)) => return finish_polished(p, pol, 0, steps),
            Err(steps) => polish_iterations += steps,
        }
    }

    let mut admm = Admm::new(p, settings, warm);
    let mut last_polish_at = 0;
    let mut prev_y = admm.stacked_duals();
    for k in 1..=settings.max_iter {
        admm.iterate();
        if k % settings.check_interval != 0 && k != settings.max_iter {
            continue;
        }
        let y = admm.stacked_duals();
        let r = admm.residuals();
        if r.primal <= r.tol.primal && r.dual <= r.tol.dual {
            if settings.polish {
                if let Ok((pol, steps)) =
                    polish::active_set_polish(p, settings, admm.active_states())
                {
                    return finish_polished(p, pol, k, polish_iterations + steps);
                }
            }
            return admm.into_solution(QpStatus::Optimal, k, polish_iterations, r);
        }
        if admm.infeasibility_certificate(&y, &prev_y) {
            return admm.into_solution(QpStatus::PrimalInfeasible, k, polish_iterations, r);
        }
        prev_y = y;
        if settings.polish
            && r.primal <= POLISH_TRIGGER * r.tol.primal
            && r.dual <= POLISH_TRIGGER * r.tol.dual
            && k >= last_polish_at + 5 * settings.check_interval
        {
            last_polish_at = k;
            match polish::active_set_polish(p, settings, admm.active_states()) {
                Ok((pol, steps)) => {
                    return finish_polished(p, pol, k, polish_iterations + steps)
                }
                Err(steps) => polish_iterations += steps,
            }
        }
        if settings.adaptive_rho && k % ADAPT_EVERY == 0 {
            admm.adapt_rho(&r);
        }
    }
    let r = admm.residuals();
    admm.into_solution(QpStatus::MaxIterations, settings.max_iter, polish_iterations, r)
}

fn finish_polished(
    p: &QpProblem,
    pol: polish::Polished,
    iterations: usize,
    polish_iterations: usize,
) -> QpSolution {
    QpSolution {
        objective: p.objective(&pol.z),
        z: pol.z,
        eq_multipliers: pol.eq,
        box_multipliers: pol.mu,
        status: QpStatus::Optimal,
        iterations,
        polish_iterations,
        polished: true,
        primal_residual: pol.primal_residual,
        dual_residual: pol.dual_residual,
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    tol: Tolerances,
}

struct Admm<'a> {
    p: &'a QpProblem,
    s: &'a QpSettings,
    bounded: Vec<usize>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    rho: f64,
    ata: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    zb: DVector<f64>,
    y_eq: DVector<f64>,
    y_b: DVector<f64>,
}

impl<'a> Admm<'a> {
    fn new(p: &'a QpProblem, s: &'a QpSettings, warm: Option<&WarmStart>) -> Self {
        let bounded: Vec<usize> = (0..p.n_vars())
            .filter(|&i| p.lower()[i].is_finite() || p.upper()[i].is_finite())
            .collect();
        let lo = DVector::from_iterator(bounded.len(), bounded.iter().map(|&i| p.lower()[i]));
        let hi = DVector::from_iterator(bounded.len(), bounded.iter().map(|&i| p.upper()[i]));
        let ata = p.a_eq().tr_mul(p.a_eq());
        let rho = s.rho;
        let chol = factor(p, s, &ata, &bounded, rho);
        let (x, y_eq, y_b) = match warm {
            Some(w) => (
                w.z.clone(),
                w.eq_multipliers.clone(),
                DVector::from_iterator(bounded.len(), bounded.iter().map(|&i| w.box_multipliers[i])),
            ),
            None => (
                DVector::zeros(p.n_vars()),
                DVector::zeros(p.n_eq()),
                DVector::zeros(bounded.len()),
            ),
        };
        let mut zb = DVector::from_iterator(bounded.len(), bounded.iter().map(|&i| x[i]));
        clip(&mut zb, &lo, &hi);
        Self {
            p,
            s,
            bounded,
            lo,
            hi,
            rho,
            ata,
            chol,
            x,
            zb,
            y_eq,
            y_b,
        }
    }

    fn rho_eq(&self) -> f64 {
        EQ_RHO_SCALE * self.rho
    }

    fn iterate(&mut self) {
        let alpha = self.s.relaxation;
        let rho = self.rho;
        let rho_eq = self.rho_eq();
        let p = self.p;

        let mut rhs = self.x.clone() * self.s.sigma - p.f();
        let eq_term = p.b_eq() * rho_eq - &self.y_eq;
        rhs += p.a_eq().tr_mul(&eq_term);
        for (k, &i) in self.bounded.iter().enumerate() {
            rhs[i] += rho * self.zb[k] - self.y_b[k];
        }
        let xt = self.chol.solve(&rhs);

        let zt_eq = p.a_eq() * &xt;
        for r in 0..p.n_eq() {
            let zh = alpha * zt_eq[r] + (1.0 - alpha) * p.b_eq()[r];
            self.y_eq[r] += rho_eq * (zh - p.b_eq()[r]);
        }
        for (k, &i) in self.bounded.iter().enumerate() {
            let zh = alpha * xt[i] + (1.0 - alpha) * self.zb[k];
            let z_new = (zh + self.y_b[k] / rho).clamp(self.lo[k], self.hi[k]);
            self.y_b[k] += rho * (zh - z_new);
            self.zb[k] = z_new;
        }
        self.x = &xt * alpha + &self.x * (1.0 - alpha);
    }

    fn box_multipliers(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.p.n_vars());
        for (k, &i) in self.bounded.iter().enumerate() {
            mu[i] = self.y_b[k];
        }
        mu
    }

    fn stacked_duals(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.y_eq.len() + self.y_b.len());
        y.rows_mut(0, self.y_eq.len()).copy_from(&self.y_eq);
        y.rows_mut(self.y_eq.len(), self.y_b.len()).copy_from(&self.y_b);
        y
    }

    fn residuals(&self) -> Residuals {
        let p = self.p;
        let ax = p.a_eq() * &self.x;
        let mut primal = if p.n_eq() > 0 { (&ax - p.b_eq()).amax() } else { 0.0 };
        let mut xb_norm: f64 = 0.0;
        for (k, &i) in self.bounded.iter().enumerate() {
            primal = primal.max((self.x[i] - self.zb[k]).abs());
            xb_norm = xb_norm.max(self.x[i].abs());
        }
        let hx = p.h() * &self.x;
        let aty = p.a_eq().tr_mul(&self.y_eq);
        let mu = self.box_multipliers();
        let dual = (&hx + p.f() + &aty + &mu).amax();
        let primal_scale = inf_norm(&ax)
            .max(inf_norm(p.b_eq()))
            .max(xb_norm)
            .max(if self.zb.is_empty() { 0.0 } else { self.zb.amax() });
        let dual_scale = inf_norm(&hx)
            .max(inf_norm(&aty))
            .max(inf_norm(&mu))
            .max(inf_norm(p.f()));
        Residuals {
            primal,
            dual,
            tol: Tolerances::new(self.s, primal_scale, dual_scale),
        }
    }

    fn active_states(&self) -> Vec<BoundState> {
        let mut states = polish::initial_states(self.p);
        for (k, &i) in self.bounded.iter().enumerate() {
            if states[i] != BoundState::Free {
                continue;
            }
            let shifted = self.zb[k] + self.y_b[k] / self.rho;
            if shifted <= self.lo[k] {
                states[i] = BoundState::Lower;
            } else if shifted >= self.hi[k] {
                states[i] = BoundState::Upper;
            }
        }
        states
    }

    /// Checks whether the dual increment certifies primal infeasibility.
    fn infeasibility_certificate(&self, y: &DVector<f64>, prev: &DVector<f64>) -> bool {
        let dy = y - prev;
        let norm = if dy.is_empty() { 0.0 } else { dy.amax() };
        if norm <= 1e-30 {
            return false;
        }
        let me = self.p.n_eq();
        let eps = self.s.infeasibility_tol * norm;
        let mut cty = self.p.a_eq().tr_mul(&dy.rows(0, me).into_owned());
        for (k, &i) in self.bounded.iter().enumerate() {
            cty[i] += dy[me + k];
        }
        if cty.amax() > eps {
            return false;
        }
        let mut support = self.p.b_eq().dot(&dy.rows(0, me));
        for k in 0..self.bounded.len() {
            let d = dy[me + k];
            if d > 0.0 {
                if !self.hi[k].is_finite() {
                    return false;
                }
                support += self.hi[k] * d;
            } else if d < 0.0 {
                if !self.lo[k].is_finite() {
                    return false;
                }
                support += self.lo[k] * d;
            }
        }
        support < -eps
    }

    fn adapt_rho(&mut self, r: &Residuals) {
        let p = self.p;
        let ax = p.a_eq() * &self.x;
        let primal_scale = inf_norm(&ax).max(inf_norm(p.b_eq())).max(inf_norm(&self.x)).max(1e-12);
        let hx = p.h() * &self.x;
        let dual_scale = inf_norm(&hx)
            .max(inf_norm(&p.a_eq().tr_mul(&self.y_eq)))
            .max(inf_norm(&self.y_b))
            .max(inf_norm(p.f()))
            .max(1e-12);
        let ratio = (r.primal / primal_scale) / (r.dual / dual_scale).max(1e-30);
        let new_rho = (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
        if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
            self.rho = new_rho;
            self.chol = factor(p, self.s, &self.ata, &self.bounded, new_rho);
        }
    }

    fn into_solution(
        self,
        status: QpStatus,
        iterations: usize,
        polish_iterations: usize,
        r: Residuals,
    ) -> QpSolution {
        let mu = self.box_multipliers();
        QpSolution {
            objective: self.p.objective(&self.x),
            z: self.x,
            eq_multipliers: self.y_eq,
            box_multipliers: mu,
            status,
            iterations,
            polish_iterations,
            polished: false,
            primal_residual: r.primal,
            dual_residual: r.dual,
        }
    }
}

fn factor(
    p: &QpProblem,
    s: &QpSettings,
    ata: &DMatrix<f64>,
    bounded: &[usize],
    rho: f64,
) -> Cholesky<f64, Dyn> {
    let n = p.n_vars();
    let mut k = p.h() + ata * (EQ_RHO_SCALE * rho);
    for i in 0..n {
        k[(i, i)] += s.regularization + s.sigma;
    }
    for &i in bounded {
        k[(i, i)] += rho;
    }
    let mut shift = 0.0;
    loop {
        let mut attempt = k.clone();
        for i in 0..n {
            attempt[(i, i)] += shift;
        }
        if let Some(c) = attempt.cholesky() {
            return c;
        }
        // H is only assumed PSD; round-off can still break the factorization.
        shift = if shift == 0.0 { 1e-10 * (1.0 + k.amax()) } else { shift * 10.0 };
    }
}

fn clip(v: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for k in 0..v.len() {
        v[k] = v[k].clamp(lo[k], hi[k]);
    }
}
