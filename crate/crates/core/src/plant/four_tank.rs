use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Plant, PlantError};

/// Sampling time of the discretized benchmark in seconds.
pub const SAMPLING_TIME: f64 = 1.5;

/// Water levels `x1..x4` in cm.
pub type PlantState = [f64; 4];

/// Physical parameters of the four-tank process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourTankParams {
    /// Tank cross-sections `A1..A4` (cm^2).
    pub tank_area: [f64; 4],
    /// Outlet cross-sections `a1..a4` (cm^2).
    pub outlet_area: [f64; 4],
    /// Flow splits `gamma1, gamma2`.
    pub gamma: [f64; 2],
    /// Gravitational acceleration (cm/s^2).
    pub g: f64,
}

impl Default for FourTankParams {
    fn default() -> Self {
        Self {
            tank_area: [50.27, 50.27, 28.27, 28.27],
            outlet_area: [0.233, 0.242, 0.127, 0.127],
            gamma: [0.4, 0.4],
            g: 981.0,
        }
    }
}

impl FourTankParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = self
            .tank_area
            .iter()
            .chain(self.outlet_area.iter())
            .chain(std::iter::once(&self.g))
            .all(|&v| v > 0.0 && v.is_finite());
        if !positive {
            return Err(PlantError::InvalidParams(
                "areas and g must be positive".into(),
            ));
        }
        if self.gamma.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(PlantError::InvalidParams("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Time derivative of the tank levels.
pub fn continuous_dynamics(
    p: &FourTankParams,
    x: &PlantState,
    u: &[f64; 2],
) -> Result<PlantState, PlantError> {
    if let Some(tank) = x.iter().position(|&v| v < 0.0) {
        return Err(PlantError::NegativeLevel {
            tank: tank + 1,
            level: x[tank],
        });
    }
    Ok(derivative(p, x, u))
}

fn derivative(p: &FourTankParams, x: &PlantState, u: &[f64; 2]) -> PlantState {
    let [a1, a2, a3, a4] = p.tank_area;
    let [o1, o2, o3, o4] = p.outlet_area;
    let [g1, g2] = p.gamma;
    let q = |level: f64| (2.0 * p.g * level.max(0.0)).sqrt();
    [
        -o1 / a1 * q(x[0]) + o3 / a1 * q(x[2]) + g1 / a1 * u[0],
        -o2 / a2 * q(x[1]) + o4 / a2 * q(x[3]) + g2 / a2 * u[1],
        -o3 / a3 * q(x[2]) + (1.0 - g2) / a3 * u[1],
        -o4 / a4 * q(x[3]) + (1.0 - g1) / a4 * u[0],
    ]
}

/// One forward-Euler step, with levels clamped at zero.
pub fn euler_step(p: &FourTankParams, x: &PlantState, u: &[f64; 2], ts: f64) -> PlantState {
    let dx = derivative(p, x, u);
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = (x[i] + ts * dx[i]).max(0.0);
    }
    next
}

/// Steady state reached under a constant input.
pub fn equilibrium_state(p: &FourTankParams, u: &[f64; 2]) -> PlantState {
    let level = |flow: f64, outlet: f64| (flow / outlet).powi(2) / (2.0 * p.g);
    let [o1, o2, o3, o4] = p.outlet_area;
    let [g1, g2] = p.gamma;
    let f3 = (1.0 - g2) * u[1];
    let f4 = (1.0 - g1) * u[0];
    [
        level(f3 + g1 * u[0], o1),
        level(f4 + g2 * u[1], o2),
        level(f3, o3),
        level(f4, o4),
    ]
}

/// Multiplies every parameter by an independent factor drawn from
/// `[1 - spread, 1 + spread]`.
pub fn perturbed_four_tank(
    p: &FourTankParams,
    relative_spread: f64,
    seed: u64,
) -> Result<FourTankParams, PlantError> {
    if !(0.0..=0.5).contains(&relative_spread) {
        return Err(PlantError::InvalidParams(format!(
            "relative spread {relative_spread} outside [0, 0.5]"
        )));
    }
    if relative_spread == 0.0 {
        return Ok(*p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || rng.gen_range(1.0 - relative_spread..=1.0 + relative_spread);
    let mut out = *p;
    for v in out.tank_area.iter_mut().chain(out.outlet_area.iter_mut()) {
        *v *= factor();
    }
    for g in out.gamma.iter_mut() {
        *g = (*g * factor()).clamp(0.01, 0.99);
    }
    out.g *= factor();
    Ok(out)
}

/// Euler-discretized four-tank process; the output is `(x1, x2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourTank {
    pub params: FourTankParams,
    pub state: PlantState,
    pub ts: f64,
    /// Euler sub-steps per sampling interval (1 = plain Euler at `ts`).
    pub substeps: usize,
}

impl FourTank {
    pub fn new(params: FourTankParams) -> Self {
        Self {
            params,
            state: [0.0; 4],
            ts: SAMPLING_TIME,
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn with_state(mut self, state: PlantState) -> Self {
        self.state = state;
        self
    }
}

impl Plant for FourTank {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.state)
    }

    fn output(&self, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.state[0], self.state[1]])
    }

    fn step(&mut self, u: &DVector<f64>) {
        let u = [u[0], u[1]];
        let h = self.ts / self.substeps as f64;
        for _ in 0..self.substeps {
            self.state = euler_step(&self.params, &self.state, &u, h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tanks_filling() {
        let p = FourTankParams::default();
        let dx = continuous_dynamics(&p, &[0.0; 4], &[20.0, 20.0]).unwrap();
        let expected = [0.15914, 0.15914, 0.42448, 0.42448];
        for i in 0..4 {
            assert!((dx[i] - expected[i]).abs() < 5e-6, "{i}: {}", dx[i]);
        }
        let next = euler_step(&p, &[0.0; 4], &[20.0, 20.0], 1.5);
        let expected = [0.23871, 0.23871, 0.63672, 0.63672];
        for i in 0..4 {
            assert!((next[i] - expected[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn no_inflow_stays_empty() {
        let p = FourTankParams::default();
        assert_eq!(continuous_dynamics(&p, &[0.0; 4], &[0.0, 0.0]).unwrap(), [0.0; 4]);
        assert_eq!(euler_step(&p, &[0.0; 4], &[0.0, 0.0], 1.5), [0.0; 4]);
    }

    #[test]
    fn euler_matches_derivative_without_clamping() {
        let p = FourTankParams::default();
        let x = [10.0, 12.0, 5.0, 7.0];
        let u = [30.0, 25.0];
        let dx = continuous_dynamics(&p, &x, &u).unwrap();
        let next = euler_step(&p, &x, &u, 1.5);
        for i in 0..4 {
            assert!(((next[i] - x[i]) / 1.5 - dx[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_level_is_rejected() {
        let p = FourTankParams::default();
        assert!(matches!(
            continuous_dynamics(&p, &[1.0, -0.1, 0.0, 0.0], &[0.0, 0.0]),
            Err(PlantError::NegativeLevel { tank: 2, .. })
        ));
    }

    #[test]
    fn equilibrium_zeroes_derivative() {
        let p = FourTankParams::default();
        let u = [44.0, 37.0];
        let x = equilibrium_state(&p, &u);
        let dx = continuous_dynamics(&p, &x, &u).unwrap();
        assert!(dx.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn perturbation_is_reproducible() {
        let p = FourTankParams::default();
        assert_eq!(perturbed_four_tank(&p, 0.0, 7).unwrap(), p);
        let a = perturbed_four_tank(&p, 0.2, 7).unwrap();
        let b = perturbed_four_tank(&p, 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p);
        a.validate().unwrap();
        for i in 0..4 {
            let r = a.tank_area[i] / p.tank_area[i];
            assert!((0.8..=1.2).contains(&r));
        }
        assert!(perturbed_four_tank(&p, 0.6, 1).is_err());
    }
}
