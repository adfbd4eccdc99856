use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// Each channel i.i.d. uniform on `[-eps_bar, eps_bar]`.
    UniformInf { eps_bar: f64 },
}

impl NoiseModel {
    pub fn bound(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::UniformInf { eps_bar } => *eps_bar,
        }
    }
}

/// Seeded noise generator.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(model: NoiseModel, seed: u64) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    pub fn sample(&mut self, dim: usize) -> DVector<f64> {
        match self.model {
            NoiseModel::None => DVector::zeros(dim),
            NoiseModel::UniformInf { eps_bar } if eps_bar > 0.0 => {
                DVector::from_fn(dim, |_, _| self.rng.gen_range(-eps_bar..=eps_bar))
            }
            NoiseModel::UniformInf { .. } => DVector::zeros(dim),
        }
    }
}

/// Noisy measurement of a noise-free output.
pub fn measure(y: &DVector<f64>, noise: &mut NoiseSource) -> DVector<f64> {
    y + noise.sample(y.len())
}
