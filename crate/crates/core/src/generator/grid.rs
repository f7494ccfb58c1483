use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::{stream_rng, TAG_GRID};

/// Validation grid: a randomly shifted Kronecker (R-sequence) point set in
/// `[−h, h]ⁿ`, plus the origin and the `±h` points on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub half_width: f64,
    pub seed: u64,
}

/// The unique positive root of `x^{d+1} = x + 1`.
fn generalized_golden_ratio(d: usize) -> f64 {
    let mut x = 2.0_f64;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (d as f64 + 1.0));
    }
    x
}

impl GridSpec {
    pub fn build(&self, dim: usize) -> Result<Vec<Vector>> {
        if dim == 0 || !(self.half_width > 0.0) {
            return Err(Error::EmptyGrid);
        }
        let h = self.half_width;
        let phi = generalized_golden_ratio(dim);
        let alpha: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
        let mut rng = stream_rng(self.seed, &[TAG_GRID]);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();

        let mut grid = Vec::with_capacity(self.points + 2 * dim + 1);
        grid.push(Vector::zeros(dim));
        for axis in 0..dim {
            for sign in [1.0, -1.0] {
                let mut e = Vector::zeros(dim);
                e[axis] = sign * h;
                grid.push(e);
            }
        }
        for i in 1..=self.points {
            let i = i as f64;
            grid.push(Vector::from_fn(dim, |j, _| {
                let u = (shift[j] + i * alpha[j]).fract();
                (2.0 * u - 1.0) * h
            }));
        }
        Ok(grid)
    }
}
