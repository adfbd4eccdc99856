//! Stand-alone optimality check for a candidate QP solution.
//!
//! Evaluates the KKT conditions directly from the problem data; shares no
//! code with the solver.

use nalgebra::DVector;

use super::QpProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `||H z + f + A' lambda + mu||_inf`
    pub stationarity: f64,
    /// `||A z - b||_inf`
    pub primal_equality: f64,
    /// Largest bound violation.
    pub bound_violation: f64,
    /// Multiplier mass on a bound that is infinite or has the wrong sign.
    pub dual_infeasibility: f64,
    /// `max_i |mu_i| * distance to the corresponding bound`.
    pub complementarity: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    stationarity_scale: f64,
    primal_scale: f64,
    z_scale: f64,
    mu_scale: f64,
}

impl KktReport {
    /// All conditions hold with relative tolerance `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.stationarity <= tol * (1.0 + self.stationarity_scale)
            && self.primal_equality <= tol * (1.0 + self.primal_scale)
            && self.bound_violation <= tol * (1.0 + self.z_scale)
            && self.dual_infeasibility <= tol * (1.0 + self.mu_scale)
            && self.complementarity <= tol * (1.0 + self.mu_scale) * (1.0 + self.z_scale)
    }

    pub fn gap_within(&self, tol: f64) -> bool {
        self.duality_gap <= tol * (1.0 + self.primal_objective.abs())
    }
}

pub fn verify(
    p: &QpProblem,
    z: &DVector<f64>,
    eq_multipliers: &DVector<f64>,
    box_multipliers: &DVector<f64>,
) -> KktReport {
    let n = p.n_vars();
    let h = p.h();
    let a = p.a_eq();

    let mut hz = DVector::zeros(n);
    for i in 0..n {
        hz[i] = (0..n).map(|j| h[(i, j)] * z[j]).sum::<f64>();
    }
    let mut at_lambda = DVector::zeros(n);
    for j in 0..n {
        at_lambda[j] = (0..p.n_eq()).map(|r| a[(r, j)] * eq_multipliers[r]).sum::<f64>();
    }
    let mut stationarity: f64 = 0.0;
    for i in 0..n {
        let g = hz[i] + p.f()[i] + at_lambda[i] + box_multipliers[i];
        stationarity = stationarity.max(g.abs());
    }

    let mut primal_equality: f64 = 0.0;
    let mut az_scale: f64 = 0.0;
    for r in 0..p.n_eq() {
        let az: f64 = (0..n).map(|j| a[(r, j)] * z[j]).sum();
        az_scale = az_scale.max(az.abs()).max(p.b_eq()[r].abs());
        primal_equality = primal_equality.max((az - p.b_eq()[r]).abs());
    }

    let mut bound_violation: f64 = 0.0;
    let mut dual_infeasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    // Support-function terms of the dual objective.
    let mut support = 0.0;
    for i in 0..n {
        let (l, u, zi, mu) = (p.lower()[i], p.upper()[i], z[i], box_multipliers[i]);
        bound_violation = bound_violation.max(l - zi).max(zi - u);
        if mu > 0.0 {
            if u.is_finite() {
                complementarity = complementarity.max(mu * (u - zi).abs());
                support += mu * u;
            } else {
                dual_infeasibility = dual_infeasibility.max(mu);
            }
        } else if mu < 0.0 {
            if l.is_finite() {
                complementarity = complementarity.max(-mu * (zi - l).abs());
                support += mu * l;
            } else {
                dual_infeasibility = dual_infeasibility.max(-mu);
            }
        }
    }

    let quad = z.dot(&hz);
    let primal_objective = 0.5 * quad + p.f().dot(z) + p.offset();
    let dual_objective = -0.5 * quad - p.b_eq().dot(eq_multipliers) - support + p.offset();

    KktReport {
        stationarity,
        primal_equality,
        bound_violation: bound_violation.max(0.0),
        dual_infeasibility,
        complementarity,
        primal_objective,
        dual_objective,
        duality_gap: (primal_objective - dual_objective).abs(),
        stationarity_scale: hz
            .amax()
            .max(p.f().amax())
            .max(at_lambda.amax())
            .max(box_multipliers.amax()),
        primal_scale: az_scale,
        z_scale: z.amax(),
        mu_scale: box_multipliers.amax(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn hand_checked_clipped_minimum() {
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, -2.0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let ok = verify(&p, &DVector::from_element(1, 1.0), &DVector::zeros(0), &DVector::from_element(1, 1.0));
        assert!(ok.passes(1e-12));
        assert!(ok.gap_within(1e-12));
        // Wrong multiplier sign breaks stationarity.
        let bad = verify(&p, &DVector::from_element(1, 1.0), &DVector::zeros(0), &DVector::from_element(1, -1.0));
        assert!(!bad.passes(1e-6));
        // Interior point with zero multiplier is not stationary.
        let interior = verify(&p, &DVector::from_element(1, 0.5), &DVector::zeros(0), &DVector::zeros(1));
        assert!(!interior.passes(1e-6));
    }
}
