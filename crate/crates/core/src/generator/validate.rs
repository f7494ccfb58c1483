//! The three acceptance checks every generated instance must pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::par::{try_map_indexed, Execution};
use crate::qg::QgInstance;
use crate::rng::{derive_seed, stream_rng, TAG_GRID, TAG_NOISE};
use crate::sim::{InitialStateSchedule, NoiseStream, ScaledOracle, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub grid_points: usize,
    pub half_width: f64,
    /// Tolerance on `max δ(s) / (1 + |V*(s)|)`.
    pub epsilon: f64,
    /// Required lower bound on `λ_min(B_p(s))`.
    pub spd_floor: f64,
    pub horizon: usize,
    pub rollouts: usize,
    /// Bound on `‖s_k‖` as a multiple of the domain radius `h√n`.
    pub bound_factor: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            grid_points: 512,
            half_width: 1.0,
            epsilon: 1e-8,
            spd_floor: 1e-10,
            horizon: 512,
            rollouts: 8,
            bound_factor: 1e3,
        }
    }
}

impl ValidationConfig {
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        let positive = [self.half_width, self.epsilon, self.bound_factor];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) || !self.spd_floor.is_finite() {
            return Err(Error::InvalidParameter(
                "validation half_width, epsilon and bound_factor must be positive".into(),
            ));
        }
        if self.rollouts == 0 {
            return Err(Error::InvalidParameter("at least one boundedness rollout".into()));
        }
        Ok(())
    }

    pub fn bound(&self, dim: usize) -> f64 {
        self.bound_factor * self.half_width * (dim as f64).sqrt()
    }

    pub fn grid(&self, seed: u64) -> GridSpec {
        GridSpec {
            points: self.grid_points,
            half_width: self.half_width,
            seed,
        }
    }
}

/// `value` is the measured statistic, `margin` its signed distance to the
/// threshold (positive means pass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub value: f64,
    pub margin: f64,
}

impl CheckResult {
    fn at_least(value: f64, floor: f64) -> Self {
        CheckResult {
            passed: value > floor,
            value,
            margin: value - floor,
        }
    }

    fn below(value: f64, ceiling: f64) -> Self {
        CheckResult {
            passed: value < ceiling,
            value,
            margin: ceiling - value,
        }
    }
}

/// `min_{s∈𝒢} λ_min(B_p(s)) > floor`.
pub fn validate_spd(inst: &QgInstance, grid: &[Vector], floor: f64, exec: Execution) -> Result<CheckResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mins = try_map_indexed(exec, grid.len(), |i| {
        Ok::<_, Error>(inst.control_hessian(&grid[i])?.min_eigenvalue())
    })?;
    Ok(CheckResult::at_least(
        mins.into_iter().fold(f64::INFINITY, f64::min),
        floor,
    ))
}

/// `max_{s∈𝒢} δ(s) / (1 + |V*(s)|) < ε`.
pub fn validate_bellman(inst: &QgInstance, grid: &[Vector], epsilon: f64, exec: Execution) -> Result<CheckResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let rel = try_map_indexed(exec, grid.len(), |i| {
        let s = &grid[i];
        Ok::<_, Error>(inst.bellman_residual(s)? / (1.0 + inst.value(s).abs()))
    })?;
    Ok(CheckResult::below(rel.into_iter().fold(0.0, f64::max), epsilon))
}

/// Largest relative energy residual over the grid; diagnostic only.
pub fn max_energy_residual(inst: &QgInstance, grid: &[Vector], exec: Execution) -> Result<f64> {
    let rel = try_map_indexed(exec, grid.len(), |i| {
        let s = &grid[i];
        Ok::<_, Error>(inst.energy_residual(s)? / (1.0 + inst.energy(s)))
    })?;
    Ok(rel.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessSpec {
    pub horizon: usize,
    pub rollouts: usize,
    pub bound: f64,
    pub seed: u64,
}

/// Closed-loop rollouts under `a*` from grid points picked by `spec.seed`,
/// with noise drawn from the same seed. Passes iff every state norm stays
/// within `spec.bound`; a diverging rollout fails with value `f64::MAX`.
pub fn validate_boundedness(
    inst: &QgInstance,
    grid: &[Vector],
    spec: &BoundednessSpec,
    exec: Execution,
) -> Result<CheckResult> {
    if spec.horizon == 0 {
        return Err(Error::InvalidHorizon);
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut pick = stream_rng(spec.seed, &[TAG_GRID, 1]);
    let starts: Vec<Vector> = (0..spec.rollouts)
        .map(|_| grid[pick.random_range(0..grid.len())].clone())
        .collect();
    let noise = NoiseStream::new(derive_seed(spec.seed, &[TAG_NOISE]), &inst.params().noise_cov)?;
    let schedule = InitialStateSchedule::random(spec.seed, 0.0);
    let sim = Simulator::new(inst, &schedule, &noise);

    let norms = try_map_indexed(exec, starts.len(), |i| {
        let run = sim.paired_rollout_from(
            &mut ScaledOracle { kappa: 1.0 },
            starts[i].clone(),
            i as u64,
            spec.horizon,
        );
        match run {
            Ok(p) => Ok(p.trajectory.max_state_norm()),
            Err(Error::NonFinite(_)) => Ok(f64::MAX),
            Err(e) => Err(e),
        }
    })?;
    let worst = norms.into_iter().fold(0.0, f64::max);
    Ok(CheckResult {
        passed: worst <= spec.bound,
        value: worst,
        margin: spec.bound - worst,
    })
}

/// Everything the validators saw and concluded, stored with the fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTrace {
    pub grid: GridSpec,
    pub epsilon: f64,
    pub spd_floor: f64,
    pub boundedness: BoundednessSpec,
    pub spd: CheckResult,
    pub bellman: CheckResult,
    pub bounded: CheckResult,
    pub max_energy_residual: f64,
}

impl ValidationTrace {
    pub fn passed(&self) -> bool {
        self.spd.passed && self.bellman.passed && self.bounded.passed
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if !self.spd.passed {
            f.push("spd");
        }
        if !self.bellman.passed {
            f.push("bellman");
        }
        if !self.bounded.passed {
            f.push("boundedness");
        }
        f
    }
}

/// Runs all three checks with seeds derived from `seed`.
pub fn validate_instance(
    inst: &QgInstance,
    config: &ValidationConfig,
    seed: u64,
    exec: Execution,
) -> Result<ValidationTrace> {
    config.check()?;
    let grid_spec = config.grid(derive_seed(seed, &[TAG_GRID]));
    let boundedness = BoundednessSpec {
        horizon: config.horizon,
        rollouts: config.rollouts,
        bound: config.bound(inst.n()),
        seed: derive_seed(seed, &[TAG_NOISE]),
    };
    rerun(inst, grid_spec, config.epsilon, config.spd_floor, boundedness, exec)
}

/// Re-runs the checks recorded in `trace` (same grid, seeds and thresholds).
pub fn revalidate(inst: &QgInstance, trace: &ValidationTrace, exec: Execution) -> Result<ValidationTrace> {
    rerun(
        inst,
        trace.grid,
        trace.epsilon,
        trace.spd_floor,
        trace.boundedness,
        exec,
    )
}

fn rerun(
    inst: &QgInstance,
    grid_spec: GridSpec,
    epsilon: f64,
    spd_floor: f64,
    boundedness: BoundednessSpec,
    exec: Execution,
) -> Result<ValidationTrace> {
    let grid = grid_spec.build(inst.n())?;
    let spd = validate_spd(inst, &grid, spd_floor, exec)?;
    let bellman = validate_bellman(inst, &grid, epsilon, exec)?;
    let bounded = validate_boundedness(inst, &grid, &boundedness, exec)?;
    let max_energy_residual = max_energy_residual(inst, &grid, exec)?;
    Ok(ValidationTrace {
        grid: grid_spec,
        epsilon,
        spd_floor,
        boundedness,
        spd,
        bellman,
        bounded,
        max_energy_residual,
    })
}
