use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::metrics::{opt_gap, paired_bootstrap, regret, BootstrapConfig, Estimate};
use crate::error::{Error, Result};
use crate::generator::Fixture;
use crate::par::{try_map_indexed, Execution};
use crate::qg::QgInstance;
use crate::sim::{InitialStateSchedule, NoiseStream, Policy, PolicySpec, ScaledOracle, Simulator};

/// Evaluation settings; unset fields fall back to the fixture's values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub n_trials: usize,
    pub horizon: Option<usize>,
    pub epsilon: f64,
    pub first_trial: u64,
    pub noise_seed: Option<u64>,
    pub schedule_seed: Option<u64>,
    pub action_bound: Option<f64>,
    pub bootstrap: BootstrapConfig,
    pub query_timeout_secs: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            n_trials: 64,
            horizon: None,
            epsilon: 1e-8,
            first_trial: 0,
            noise_seed: None,
            schedule_seed: None,
            action_bound: None,
            bootstrap: BootstrapConfig::default(),
            query_timeout_secs: 10.0,
        }
    }
}

/// A protocol with every default materialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedProtocol {
    pub n_trials: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub first_trial: u64,
    pub noise_seed: u64,
    pub schedule_seed: u64,
    pub action_bound: Option<f64>,
    pub bootstrap: BootstrapConfig,
    pub query_timeout_secs: f64,
}

impl Protocol {
    pub fn resolve(&self, fixture: &Fixture) -> Result<ResolvedProtocol> {
        let resolved = ResolvedProtocol {
            n_trials: self.n_trials,
            horizon: self.horizon.unwrap_or(fixture.horizon),
            epsilon: self.epsilon,
            first_trial: self.first_trial,
            noise_seed: self.noise_seed.unwrap_or(fixture.seeds.noise),
            schedule_seed: self.schedule_seed.unwrap_or(fixture.schedule.seed),
            action_bound: self.action_bound.or(fixture.action_bound),
            bootstrap: self.bootstrap,
            query_timeout_secs: self.query_timeout_secs,
        };
        resolved.check()?;
        Ok(resolved)
    }
}

impl ResolvedProtocol {
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        if self.n_trials == 0 {
            return Err(Error::EmptyInput);
        }
        if !(self.epsilon > 0.0) || !(self.query_timeout_secs > 0.0) {
            return Err(Error::InvalidParameter(
                "epsilon and query timeout must be positive".into(),
            ));
        }
        if let Some(b) = self.action_bound {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "action bound must be positive, got {b}"
                )));
            }
        }
        self.bootstrap.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub s0: Vec<f64>,
    /// Truncated discounted return of the policy.
    pub v_pi: f64,
    /// `V_r*(s₀)`
    pub v_star: f64,
    pub opt_gap: f64,
    /// Discounted sum of the per-step gaps at the policy's own states.
    pub regret: f64,
    /// Oracle return minus policy return, both from `s₀` with the same noise.
    pub regret_return_diff: f64,
    pub tail_bound: f64,
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fixture_checksum: String,
    pub family: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub strength: f64,
    pub gamma: f64,
    pub policy: String,
    pub protocol: ResolvedProtocol,
    pub opt_gap: Estimate,
    pub regret: Estimate,
    pub regret_return_diff: Estimate,
    pub trials: Vec<TrialResult>,
}

/// Identifies what is being evaluated, for the report header.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub fixture_checksum: String,
    pub family: String,
}

pub const CSV_HEADER: &str =
    "experiment,algorithm,optgap_mean,optgap_ci_low,optgap_ci_high,regret_mean,regret_ci_low,regret_ci_high";

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// One line in the layout of [`CSV_HEADER`].
    pub fn csv_row(&self, experiment: &str) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            quote(experiment),
            quote(&self.policy),
            self.opt_gap.mean,
            self.opt_gap.ci_low,
            self.opt_gap.ci_high,
            self.regret.mean,
            self.regret.ci_low,
            self.regret.ci_high
        )
    }

    /// Recomputes the three aggregates from the stored trials.
    pub fn recompute(&self, exec: Execution) -> Result<(Estimate, Estimate, Estimate)> {
        aggregate(&self.trials, &self.protocol.bootstrap, exec)
    }
}

fn aggregate(
    trials: &[TrialResult],
    bootstrap: &BootstrapConfig,
    exec: Execution,
) -> Result<(Estimate, Estimate, Estimate)> {
    let column = |f: fn(&TrialResult) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    Ok((
        paired_bootstrap(&column(|t| t.opt_gap), bootstrap, exec)?,
        paired_bootstrap(&column(|t| t.regret), bootstrap, exec)?,
        paired_bootstrap(&column(|t| t.regret_return_diff), bootstrap, exec)?,
    ))
}

fn run_trial(
    sim: &Simulator<'_>,
    policy: &mut dyn Policy,
    same_as_oracle: bool,
    trial: u64,
    protocol: &ResolvedProtocol,
) -> Result<TrialResult> {
    let inst = sim.instance();
    let horizon = protocol.horizon;
    let paired = sim.paired_rollout(policy, trial, horizon)?;
    let t = &paired.trajectory;
    let oracle_return = if same_as_oracle {
        t.discounted_return
    } else {
        sim.rollout(&mut ScaledOracle { kappa: 1.0 }, trial, horizon)?
            .discounted_return
    };
    let s0 = &t.states[0];
    let v_star = inst.reward_value(s0);
    let v_pi = t.discounted_return;
    Ok(TrialResult {
        trial,
        s0: s0.iter().copied().collect(),
        v_pi,
        v_star,
        opt_gap: opt_gap(v_pi, v_star, protocol.epsilon),
        regret: regret(&paired.gaps, inst.gamma(), horizon)?,
        regret_return_diff: oracle_return - v_pi,
        tail_bound: t.tail_bound,
        gaps: paired.gaps,
    })
}

/// Runs `n_trials` paired rollouts of `policy` on `inst` and aggregates.
/// Built-in policies run trials in parallel; an external policy keeps one
/// process for all trials, queried in order.
pub fn evaluate_instance(
    inst: &QgInstance,
    meta: &ReportMeta,
    schedule: &InitialStateSchedule,
    policy: &PolicySpec,
    protocol: &ResolvedProtocol,
    exec: Execution,
) -> Result<EvalReport> {
    protocol.check()?;
    let schedule = InitialStateSchedule {
        seed: protocol.schedule_seed,
        ..schedule.clone()
    };
    let noise = NoiseStream::new(protocol.noise_seed, &inst.params().noise_cov)?;
    let sim = Simulator::new(inst, &schedule, &noise).with_action_bound(protocol.action_bound);
    let same_as_oracle = *policy == PolicySpec::Oracle && protocol.action_bound.is_none();
    let trial_id = |i: usize| protocol.first_trial + i as u64;

    let trials = if policy.is_builtin() {
        try_map_indexed(exec, protocol.n_trials, |i| {
            let mut p = policy.instantiate(inst)?;
            run_trial(&sim, p.as_mut(), same_as_oracle, trial_id(i), protocol)
        })?
    } else {
        let timeout = Duration::from_secs_f64(protocol.query_timeout_secs);
        let mut p = policy.instantiate_with_timeout(inst, timeout)?;
        (0..protocol.n_trials)
            .map(|i| run_trial(&sim, p.as_mut(), false, trial_id(i), protocol))
            .collect::<Result<Vec<_>>>()?
    };

    let (opt_gap, regret, regret_return_diff) = aggregate(&trials, &protocol.bootstrap, exec)?;
    Ok(EvalReport {
        fixture_checksum: meta.fixture_checksum.clone(),
        family: meta.family.clone(),
        state_dim: inst.n(),
        action_dim: inst.m(),
        strength: inst.strength(),
        gamma: inst.gamma(),
        policy: policy.to_string(),
        protocol: *protocol,
        opt_gap,
        regret,
        regret_return_diff,
        trials,
    })
}

pub fn evaluate(fixture: &Fixture, policy: &PolicySpec, protocol: &Protocol, exec: Execution) -> Result<EvalReport> {
    let inst = fixture.build_instance()?;
    let resolved = protocol.resolve(fixture)?;
    let meta = ReportMeta {
        fixture_checksum: fixture.checksum()?,
        family: fixture.family.to_string(),
    };
    evaluate_instance(&inst, &meta, &fixture.schedule, policy, &resolved, exec)
}
