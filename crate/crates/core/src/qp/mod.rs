//! Dense convex quadratic programming with equality and box constraints.
//!
//! ```text
//! minimize    1/2 z' H z + f' z + offset
//! subject to  A_eq z = b_eq
//!             lower <= z <= upper
//! ```
//!
//! [`solve`] runs an operator-splitting (ADMM) iteration on a Cholesky
//! factorization of the regularized KKT operator and finishes with an
//! active-set polishing step that solves the reduced KKT system exactly.
//! [`solve_equality_only`] factors the saddle-point system directly.
//!
//! Sign convention for multipliers: stationarity reads
//! `H z + f + A_eq' eq_multipliers + box_multipliers = 0`, so box
//! multipliers are positive at active upper bounds and negative at active
//! lower bounds.

mod admm;
pub mod kkt;
mod polish;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use admm::{solve, solve_warm};
pub use polish::solve_equality_only;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimension(String),
    #[error("lower bound exceeds upper bound at index {index}: {lower} > {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("KKT system is singular (rank defect {rank_defect} of {dim})")]
    SingularKkt { rank_defect: usize, dim: usize },
}

/// Problem data; `h` is symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: DMatrix<f64>,
    f: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    offset: f64,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(QpError::Dimension(format!(
                "H is {}x{}, expected {n}x{n}",
                h.nrows(),
                h.ncols()
            )));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(QpError::Dimension(format!(
                "A_eq is {}x{}, b_eq has {} entries, {n} variables",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        if lower.len() != n || upper.len() != n {
            return Err(QpError::Dimension(format!(
                "bounds have lengths {}/{}, expected {n}",
                lower.len(),
                upper.len()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("H"));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("f"));
        }
        if a_eq.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("A_eq"));
        }
        if b_eq.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("b_eq"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        for i in 0..n {
            if lower[i] > upper[i] {
                return Err(QpError::InvertedBounds {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        Ok(Self {
            h,
            f,
            a_eq,
            b_eq,
            lower,
            upper,
            offset: 0.0,
        })
    }

    /// Problem without equality constraints or bounds.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self, QpError> {
        let n = f.len();
        Self::new(
            h,
            f,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    /// Constant added to the reported objective.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.f.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn has_bounds(&self) -> bool {
        self.lower.iter().any(|v| v.is_finite()) || self.upper.iter().any(|v| v.is_finite())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z) + self.offset
    }

    /// Same problem with `H` and `f` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.h *= factor;
        p.f *= factor;
        p.offset *= factor;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Ridge added to the diagonal of `H`.
    pub regularization: f64,
    /// Initial ADMM step size.
    pub rho: f64,
    /// Proximal term keeping the ADMM linear system positive definite.
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    pub adaptive_rho: bool,
    /// Run active-set polishing (also used to seed from warm starts).
    pub polish: bool,
    pub max_polish_iter: usize,
    /// Residuals are evaluated every `check_interval` ADMM iterations.
    pub check_interval: usize,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_iter: 20_000,
            regularization: 1e-10,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            adaptive_rho: true,
            polish: true,
            max_polish_iter: 25,
            check_interval: 10,
            infeasibility_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub box_multipliers: DVector<f64>,
    pub status: QpStatus,
    /// ADMM iterations performed.
    pub iterations: usize,
    /// Reduced KKT solves performed while polishing.
    pub polish_iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            z: self.z.clone(),
            eq_multipliers: self.eq_multipliers.clone(),
            box_multipliers: self.box_multipliers.clone(),
        }
    }
}

/// Previous primal/dual iterate used to seed a new solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub box_multipliers: DVector<f64>,
}

/// Residual tolerances shared by the ADMM loop and the polisher.
pub(crate) struct Tolerances {
    pub primal: f64,
    pub dual: f64,
}

impl Tolerances {
    pub fn new(
        s: &QpSettings,
        primal_scale: f64,
        dual_scale: f64,
    ) -> Self {
        Self {
            primal: s.abs_tol + s.rel_tol * primal_scale,
            dual: s.abs_tol + s.rel_tol * dual_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_symmetrizes_and_validates() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let p = QpProblem::unconstrained(h, DVector::zeros(2)).unwrap();
        assert_eq!(p.h()[(0, 1)], 0.5);
        assert_eq!(p.h()[(1, 0)], 0.5);

        let bad = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(1, 3),
            DVector::zeros(1),
            DVector::zeros(2),
            DVector::zeros(2),
        );
        assert!(matches!(bad, Err(QpError::Dimension(_))));

        let inverted = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 0.0),
        );
        assert!(matches!(inverted, Err(QpError::InvertedBounds { index: 0, .. })));
    }
}
