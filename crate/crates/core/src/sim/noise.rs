use nalgebra::Cholesky;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{spd_sqrt, Matrix, SymMatrix, Vector};
use crate::rng::{stream_rng, TAG_NOISE, TAG_SCHEDULE};

/// Gaussian process noise whose `k`-th draw in trial `t` depends only on
/// `(seed, t, k)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    dim: usize,
    /// `L` with `L Lᵀ = Σ`; `None` when `Σ = 0`.
    factor: Option<Matrix>,
}

impl NoiseStream {
    pub fn new(seed: u64, sigma: &SymMatrix) -> Result<Self> {
        let dim = sigma.dim();
        let factor = if sigma.matrix().iter().all(|x| *x == 0.0) {
            None
        } else {
            match Cholesky::new(sigma.matrix().clone()) {
                Some(c) => Some(c.l()),
                // singular but PSD: any square root works as a factor
                None => Some(spd_sqrt(sigma)?.into_matrix()),
            }
        };
        Ok(Self { seed, dim, factor })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn factor(&self) -> Option<&Matrix> {
        self.factor.as_ref()
    }

    pub fn sample(&self, trial: u64, step: u64) -> Vector {
        match &self.factor {
            None => Vector::zeros(self.dim),
            Some(l) => {
                let mut rng = stream_rng(self.seed, &[TAG_NOISE, trial, step]);
                let e = Vector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut rng));
                l * e
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScheduleMode {
    /// The same start state every trial.
    Fixed { state: Vec<f64> },
    /// Uniform over the cube `[−half_width, half_width]ⁿ`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSchedule {
    pub seed: u64,
    #[serde(flatten)]
    pub mode: ScheduleMode,
    pub half_width: f64,
}

impl InitialStateSchedule {
    pub fn random(seed: u64, half_width: f64) -> Self {
        Self {
            seed,
            mode: ScheduleMode::Random,
            half_width,
        }
    }

    pub fn fixed(seed: u64, state: &Vector) -> Self {
        Self {
            seed,
            mode: ScheduleMode::Fixed {
                state: state.iter().copied().collect(),
            },
            half_width: state.amax(),
        }
    }

    pub fn initial_state(&self, trial: u64, dim: usize) -> Vector {
        match &self.mode {
            ScheduleMode::Fixed { state } => Vector::from_column_slice(state),
            ScheduleMode::Random => {
                use rand::Rng;
                let mut rng = stream_rng(self.seed, &[TAG_SCHEDULE, trial]);
                let h = self.half_width;
                Vector::from_fn(dim, |_, _| rng.random_range(-h..=h))
            }
        }
    }
}
