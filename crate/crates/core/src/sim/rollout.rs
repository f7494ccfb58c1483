use serde::{Deserialize, Serialize};

use super::noise::{InitialStateSchedule, NoiseStream};
use super::policy::{Observation, Policy};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::qg::{PointEval, QgInstance};

/// `s' = f_p(s) + p g(s) a + w`.
pub fn step(inst: &QgInstance, s: &Vector, a: &Vector, w: &Vector) -> Result<Vector> {
    let pe = inst.evaluate(s)?;
    step_with(&pe, a, w)
}

fn step_with(pe: &PointEval, a: &Vector, w: &Vector) -> Result<Vector> {
    if a.len() != pe.coupling.ncols() {
        return Err(Error::DimensionMismatch {
            context: "action",
            expected: pe.coupling.ncols(),
            actual: a.len(),
        });
    }
    if w.len() != pe.drift.len() {
        return Err(Error::DimensionMismatch {
            context: "noise",
            expected: pe.drift.len(),
            actual: w.len(),
        });
    }
    let next = &pe.drift + &pe.coupling * a + w;
    if next.iter().all(|x| x.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite("next state"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySeeds {
    pub noise: u64,
    pub schedule: u64,
    pub trial: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seeds: TrajectorySeeds,
    /// `s₀ … s_T`
    pub states: Vec<Vector>,
    /// `a₀ … a_{T−1}`, after clipping.
    pub actions: Vec<Vector>,
    pub noise: Vec<Vector>,
    /// `r_k = −c(s_k, a_k)`
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
    /// `γᵀ · max_k |V*(s_k)|`, a scale for what truncation leaves out.
    pub tail_bound: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn max_state_norm(&self) -> f64 {
        self.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

/// A rollout under π with the oracle's counterfactual choice recorded at
/// every visited state.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTrajectory {
    pub trajectory: Trajectory,
    pub oracle_actions: Vec<Vector>,
    pub oracle_rewards: Vec<f64>,
    /// `r(s_k, π(s_k)) − r(s_k, a*(s_k))`
    pub gaps: Vec<f64>,
}

/// `Σ_k γᵏ x_k`, accumulated left to right with a running discount.
pub fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for v in values {
        total += discount * v;
        discount *= gamma;
    }
    total
}

/// Everything needed to reproduce a set of trials.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    instance: &'a QgInstance,
    schedule: &'a InitialStateSchedule,
    noise: &'a NoiseStream,
    action_bound: Option<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(instance: &'a QgInstance, schedule: &'a InitialStateSchedule, noise: &'a NoiseStream) -> Self {
        Self {
            instance,
            schedule,
            noise,
            action_bound: None,
        }
    }

    /// Clip every action component to `[−bound, bound]`.
    pub fn with_action_bound(mut self, bound: Option<f64>) -> Self {
        self.action_bound = bound;
        self
    }

    pub fn instance(&self) -> &QgInstance {
        self.instance
    }

    pub fn initial_state(&self, trial: u64) -> Vector {
        self.schedule.initial_state(trial, self.instance.n())
    }

    pub fn rollout(&self, policy: &mut dyn Policy, trial: u64, horizon: usize) -> Result<Trajectory> {
        Ok(self.paired_rollout(policy, trial, horizon)?.trajectory)
    }

    pub fn paired_rollout(&self, policy: &mut dyn Policy, trial: u64, horizon: usize) -> Result<PairedTrajectory> {
        let s0 = self.initial_state(trial);
        self.paired_rollout_from(policy, s0, trial, horizon)
    }

    pub fn paired_rollout_from(
        &self,
        policy: &mut dyn Policy,
        s0: Vector,
        trial: u64,
        horizon: usize,
    ) -> Result<PairedTrajectory> {
        if horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        let inst = self.instance;
        let m = inst.m();
        policy.reset(trial)?;

        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut noise = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut oracle_actions = Vec::with_capacity(horizon);
        let mut oracle_rewards = Vec::with_capacity(horizon);
        let mut gaps = Vec::with_capacity(horizon);

        let mut s = s0;
        for k in 0..horizon {
            let pe = inst.evaluate(&s)?;
            let mut a = policy.act(&Observation {
                trial,
                step: k,
                state: &s,
                oracle_action: &pe.action,
            })?;
            if a.len() != m || a.iter().any(|x| !x.is_finite()) {
                return Err(Error::PolicyFailure(format!(
                    "step {k}: policy returned {} entries (finite: {}), expected {m}",
                    a.len(),
                    a.iter().all(|x| x.is_finite())
                )));
            }
            if let Some(b) = self.action_bound {
                a.apply(|x| *x = x.clamp(-b, b));
            }
            let w = self.noise.sample(trial, k as u64);
            let next = step_with(&pe, &a, &w)?;

            let r = inst.reward(&s, &a);
            let r_star = inst.reward(&s, &pe.action);
            gaps.push(r - r_star);
            rewards.push(r);
            oracle_rewards.push(r_star);
            oracle_actions.push(pe.action);
            actions.push(a);
            noise.push(w);
            states.push(std::mem::replace(&mut s, next));
        }
        states.push(s);

        let gamma = inst.gamma();
        let discounted_return = discounted_sum(&rewards, gamma);
        let max_value = states.iter().map(|s| inst.value(s).abs()).fold(0.0, f64::max);
        let tail_bound = gamma.powi(horizon as i32) * max_value;

        Ok(PairedTrajectory {
            trajectory: Trajectory {
                seeds: TrajectorySeeds {
                    noise: self.noise.seed(),
                    schedule: self.schedule.seed,
                    trial,
                },
                states,
                actions,
                noise,
                rewards,
                discounted_return,
                tail_bound,
            },
            oracle_actions,
            oracle_rewards,
            gaps,
        })
    }
}
