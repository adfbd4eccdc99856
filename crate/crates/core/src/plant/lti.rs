use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Plant, PlantError};
use crate::linalg;

const MAX_ATTEMPTS: usize = 200;
const RANK_TOL: f64 = 1e-9;

/// Discrete-time state-space system `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x: DVector<f64>,
}

/// Properties verified when a random system is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiCertificate {
    pub spectral_radius: f64,
    pub controllability_rank: usize,
    pub observability_rank: usize,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        if !a.is_square()
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
        {
            return Err(PlantError::Dimension(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            x: DVector::zeros(n),
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn without_feedthrough(mut self) -> Self {
        self.d.fill(0.0);
        self
    }

    pub fn with_state(mut self, x: DVector<f64>) -> Self {
        self.x = x;
        self
    }

    pub fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    /// Outputs and visited states (`x_0..x_{T-1}`) from `x0` under `inputs`.
    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut x = x0.clone();
        let mut ys = Vec::with_capacity(inputs.len());
        let mut xs = Vec::with_capacity(inputs.len());
        for u in inputs {
            ys.push(self.output_at(&x, u));
            xs.push(x.clone());
            x = self.next_state(&x, u);
        }
        (ys, xs)
    }

    /// Steady state and output for a constant input, if `I - A` is invertible.
    pub fn equilibrium(&self, u: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.order();
        let m = DMatrix::identity(n, n) - &self.a;
        let x = m.lu().solve(&(&self.b * u))?;
        let y = self.output_at(&x, u);
        Some((x, y))
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let n = self.order();
        let m = self.n_inputs();
        let mut out = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            out.columns_mut(k * m, m).copy_from(&block);
            block = &self.a * block;
        }
        out
    }

    /// `[C; CA; ...; CA^{depth-1}]`
    pub fn observability_matrix(&self, depth: usize) -> DMatrix<f64> {
        let n = self.order();
        let p = self.n_outputs();
        let mut out = DMatrix::zeros(p * depth, n);
        let mut block = self.c.clone();
        for k in 0..depth {
            out.rows_mut(k * p, p).copy_from(&block);
            block = block * &self.a;
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn certificate(&self) -> LtiCertificate {
        LtiCertificate {
            spectral_radius: self.spectral_radius(),
            controllability_rank: linalg::numerical_rank(&self.controllability_matrix(), RANK_TOL),
            observability_rank: linalg::numerical_rank(
                &self.observability_matrix(self.order()),
                RANK_TOL,
            ),
        }
    }
}

impl Plant for LtiSystem {
    fn input_dim(&self) -> usize {
        self.n_inputs()
    }

    fn output_dim(&self) -> usize {
        self.n_outputs()
    }

    fn state(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        self.output_at(&self.x, u)
    }

    fn step(&mut self, u: &DVector<f64>) {
        self.x = self.next_state(&self.x, u);
    }
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Draws a controllable and observable system whose spectral radius lies in
/// `[spectral_radius_max / 2, spectral_radius_max]`. Entries of `B`, `C`, `D`
/// are uniform on `[-1, 1]`.
pub fn random_lti(
    n: usize,
    m: usize,
    p: usize,
    spectral_radius_max: f64,
    seed: u64,
) -> Result<(LtiSystem, LtiCertificate), PlantError> {
    if n == 0 || m == 0 || p == 0 {
        return Err(PlantError::Dimension("n, m, p must be at least 1".into()));
    }
    if !(spectral_radius_max > 0.0) {
        return Err(PlantError::InvalidParams(
            "spectral radius bound must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..=1.0));
    for _ in 0..MAX_ATTEMPTS {
        let a0 = uniform(n, n);
        let b = uniform(n, m);
        let c = uniform(p, n);
        let d = uniform(p, m);
        let rho0 = spectral_radius(&a0);
        if rho0 < 1e-6 {
            continue;
        }
        let target = spectral_radius_max * (0.5 + 0.5 * a0[(0, 0)].abs());
        let a = a0 * (target / rho0);
        let sys = LtiSystem::new(a, b, c, d)?;
        let cert = sys.certificate();
        if cert.controllability_rank == n
            && cert.observability_rank == n
            && cert.spectral_radius <= spectral_radius_max * (1.0 + 1e-12)
            && sys.equilibrium(&DVector::zeros(m)).is_some()
        {
            return Ok((sys, cert));
        }
    }
    Err(PlantError::SamplingFailed(MAX_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_system_certificates() {
        let (sys, cert) = random_lti(1, 1, 1, 0.9, 5).unwrap();
        assert_eq!(cert.controllability_rank, 1);
        assert_eq!(cert.observability_rank, 1);
        assert!(sys.b[(0, 0)] != 0.0 && sys.c[(0, 0)] != 0.0);
        assert!(cert.spectral_radius <= 0.9 + 1e-12);
    }

    #[test]
    fn seeds_are_deterministic() {
        let (a, _) = random_lti(3, 2, 2, 0.95, 17).unwrap();
        let (b, _) = random_lti(3, 2, 2, 0.95, 17).unwrap();
        assert_eq!(a, b);
        let (c, _) = random_lti(3, 2, 2, 0.95, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulation_matches_recursion_bitwise() {
        let (sys, _) = random_lti(3, 1, 2, 0.95, 2).unwrap();
        let inputs: Vec<DVector<f64>> = (0..20)
            .map(|k| DVector::from_element(1, (k as f64 * 0.7).sin()))
            .collect();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let (ys, xs) = sys.simulate(&x0, &inputs);
        let mut x = x0.clone();
        for (k, u) in inputs.iter().enumerate() {
            assert_eq!(xs[k], x);
            assert_eq!(ys[k], &sys.c * &x + &sys.d * u);
            x = &sys.a * &x + &sys.b * u;
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let (sys, _) = random_lti(4, 2, 2, 0.95, 9).unwrap();
        let u = DVector::from_vec(vec![0.3, -1.2]);
        let (x, y) = sys.equilibrium(&u).unwrap();
        assert!((sys.next_state(&x, &u) - &x).amax() < 1e-12);
        assert!((sys.output_at(&x, &u) - y).amax() < 1e-15);
    }
}
