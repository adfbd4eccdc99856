//! Exact reduced-KKT solves: the active-set polisher used by [`super::solve`]
//! and the direct equality-only path.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::{QpError, QpProblem, QpSettings, QpSolution, QpStatus, Tolerances};
use crate::linalg;

/// Dual-block regularization of the reduced KKT matrix; removed again by
/// iterative refinement.
const DUAL_REG: f64 = 1e-9;
const MAX_REFINE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum BoundState {
    Free,
    Lower,
    Upper,
}

pub(crate) struct Polished {
    pub z: DVector<f64>,
    pub eq: DVector<f64>,
    pub mu: DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Initial bound states inferred from a previous primal/dual pair.
pub(crate) fn states_from_warm(
    p: &QpProblem,
    z: &DVector<f64>,
    mu: &DVector<f64>,
) -> Vec<BoundState> {
    (0..p.n_vars())
        .map(|i| {
            let (l, u) = (p.lower()[i], p.upper()[i]);
            if l == u {
                BoundState::Lower
            } else if l.is_finite() && (mu[i] < 0.0 || z[i] <= l) {
                BoundState::Lower
            } else if u.is_finite() && (mu[i] > 0.0 || z[i] >= u) {
                BoundState::Upper
            } else {
                BoundState::Free
            }
        })
        .collect()
}

pub(crate) fn initial_states(p: &QpProblem) -> Vec<BoundState> {
    (0..p.n_vars())
        .map(|i| {
            if p.lower()[i] == p.upper()[i] {
                BoundState::Lower
            } else {
                BoundState::Free
            }
        })
        .collect()
}

/// Primal-dual active-set iteration on the bound constraints, each step an
/// exact solve of the reduced equality-constrained KKT system. Returns
/// `Err(steps)` when the iteration cycles, stalls, or hits the step limit.
pub(crate) fn active_set_polish(
    p: &QpProblem,
    s: &QpSettings,
    mut states: Vec<BoundState>,
) -> Result<(Polished, usize), usize> {
    let mut seen: HashSet<Vec<BoundState>> = HashSet::new();
    for step in 1..=s.max_polish_iter.max(1) {
        if !seen.insert(states.clone()) {
            return Err(step - 1);
        }
        let Some(cand) = reduced_solve(p, s.regularization, &states) else {
            return Err(step);
        };
        let tol = candidate_tolerances(p, s, &cand);
        let mut changed = false;
        for i in 0..p.n_vars() {
            let (l, u) = (p.lower()[i], p.upper()[i]);
            if l == u {
                continue;
            }
            let zi = cand.z[i];
            match states[i] {
                BoundState::Free => {
                    if zi < l - bound_tol(s, l) {
                        states[i] = BoundState::Lower;
                        changed = true;
                    } else if zi > u + bound_tol(s, u) {
                        states[i] = BoundState::Upper;
                        changed = true;
                    }
                }
                BoundState::Lower => {
                    if cand.mu[i] > tol.dual {
                        states[i] = BoundState::Free;
                        changed = true;
                    }
                }
                BoundState::Upper => {
                    if cand.mu[i] < -tol.dual {
                        states[i] = BoundState::Free;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            if cand.primal_residual <= tol.primal && cand.dual_residual <= tol.dual {
                return Ok((cand, step));
            }
            return Err(step);
        }
    }
    Err(s.max_polish_iter)
}

fn bound_tol(s: &QpSettings, bound: f64) -> f64 {
    s.abs_tol + s.rel_tol * (1.0 + bound.abs())
}

fn candidate_tolerances(p: &QpProblem, s: &QpSettings, c: &Polished) -> Tolerances {
    let az = p.a_eq() * &c.z;
    let primal_scale = linalg::inf_norm(&az).max(linalg::inf_norm(p.b_eq()));
    let hz = p.h() * &c.z;
    let aty = p.a_eq().tr_mul(&c.eq);
    let dual_scale = linalg::inf_norm(&hz)
        .max(linalg::inf_norm(&aty))
        .max(linalg::inf_norm(&c.mu))
        .max(linalg::inf_norm(p.f()));
    Tolerances::new(s, primal_scale, dual_scale)
}

/// Solves the KKT system with bound-active variables fixed at their bounds.
fn reduced_solve(p: &QpProblem, reg: f64, states: &[BoundState]) -> Option<Polished> {
    let n = p.n_vars();
    let me = p.n_eq();
    let mut free = Vec::with_capacity(n);
    let mut z = DVector::zeros(n);
    for (i, st) in states.iter().enumerate() {
        match st {
            BoundState::Free => free.push(i),
            BoundState::Lower => z[i] = p.lower()[i],
            BoundState::Upper => z[i] = p.upper()[i],
        }
    }
    let nf = free.len();
    let dim = nf + me;

    // Contribution of the fixed variables to the right-hand side.
    let hz_fixed = p.h() * &z;
    let az_fixed = p.a_eq() * &z;

    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            k[(a, b)] = p.h()[(i, j)];
        }
        k[(a, a)] += reg;
        rhs[a] = -p.f()[i] - hz_fixed[i];
        for r in 0..me {
            let v = p.a_eq()[(r, i)];
            k[(nf + r, a)] = v;
            k[(a, nf + r)] = v;
        }
    }
    for r in 0..me {
        k[(nf + r, nf + r)] = -DUAL_REG;
        rhs[nf + r] = p.b_eq()[r] - az_fixed[r];
    }

    let sol = if dim == 0 {
        DVector::zeros(0)
    } else {
        let lu = k.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        // Refine towards the unregularized system.
        let scale = 1.0 + rhs.amax();
        for _ in 0..MAX_REFINE {
            let mut resid = &rhs - &k * &sol;
            for r in 0..me {
                resid[nf + r] -= DUAL_REG * sol[nf + r];
            }
            if resid.amax() <= 1e-15 * scale {
                break;
            }
            let corr = lu.solve(&resid)?;
            sol += corr;
        }
        sol
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    for (a, &i) in free.iter().enumerate() {
        z[i] = sol[a];
    }
    let eq = sol.rows(nf, me).into_owned();
    let mut grad = p.h() * &z + p.f() + p.a_eq().tr_mul(&eq);
    grad.axpy(reg, &z, 1.0);
    let mut mu = -grad.clone();
    let mut dual_residual: f64 = 0.0;
    for &i in &free {
        dual_residual = dual_residual.max(grad[i].abs());
        mu[i] = 0.0;
    }
    let primal_residual = if me > 0 {
        (p.a_eq() * &z - p.b_eq()).amax()
    } else {
        0.0
    };
    Some(Polished {
        z,
        eq,
        mu,
        primal_residual,
        dual_residual,
    })
}

/// Solves an equality-constrained QP through its KKT saddle system.
///
/// Fails with [`QpError::SingularKkt`] when the saddle matrix is singular,
/// which covers inconsistent or redundant constraints and Hessians that are
/// not positive definite on the null space of `a_eq`.
pub fn solve_equality_only(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = f.len();
    let p = QpProblem::new(
        h.clone(),
        f.clone(),
        a_eq.clone(),
        b_eq.clone(),
        DVector::from_element(n, f64::NEG_INFINITY),
        DVector::from_element(n, f64::INFINITY),
    )?;
    let me = p.n_eq();
    let dim = n + me;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(p.h());
    k.view_mut((n, 0), (me, n)).copy_from(p.a_eq());
    k.view_mut((0, n), (n, me)).copy_from(&p.a_eq().transpose());
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-p.f()));
    rhs.rows_mut(n, me).copy_from(p.b_eq());

    let singular = || QpError::SingularKkt {
        rank_defect: dim - linalg::numerical_rank(&k, 1e-12),
        dim,
    };
    let lu = k.clone().lu();
    let diag = lu.u().diagonal().abs();
    if dim > 0 && diag.min() <= 1e-13 * diag.max().max(f64::MIN_POSITIVE) {
        return Err(singular());
    }
    let mut sol = lu.solve(&rhs).ok_or_else(singular)?;
    for _ in 0..2 {
        let resid = &rhs - &k * &sol;
        if let Some(c) = lu.solve(&resid) {
            sol += c;
        }
    }
    let z = sol.rows(0, n).into_owned();
    let eq = sol.rows(n, me).into_owned();
    let primal_residual = if me > 0 { (p.a_eq() * &z - p.b_eq()).amax() } else { 0.0 };
    let dual = p.h() * &z + p.f() + p.a_eq().tr_mul(&eq);
    let dual_residual = if n > 0 { dual.amax() } else { 0.0 };
    let scale = 1.0 + rhs.amax() + z.amax();
    if primal_residual > 1e-6 * scale || dual_residual > 1e-6 * scale {
        return Err(singular());
    }
    Ok(QpSolution {
        objective: p.objective(&z),
        z,
        eq_multipliers: eq,
        box_multipliers: DVector::zeros(n),
        status: QpStatus::Optimal,
        iterations: 0,
        polish_iterations: 1,
        polished: true,
        primal_residual,
        dual_residual,
    })
}
