//! JSON-lines dumps of trajectories and noise streams, for debugging and for
//! cross-checking other simulators against this one.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::noise::NoiseStream;
use super::rollout::{discounted_sum, PairedTrajectory};
use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_checksum: Option<String>,
    pub policy: String,
    pub trial: u64,
    pub horizon: usize,
    pub gamma: f64,
    pub noise_seed: u64,
    pub schedule_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub w: Vec<f64>,
    pub a_star: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub k: usize,
    pub s: Vec<f64>,
    pub discounted_return: f64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Header(TrajectoryHeader),
    Step(StepRecord),
    Final(FinalRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDump {
    pub header: TrajectoryHeader,
    pub steps: Vec<StepRecord>,
    pub last: FinalRecord,
}

impl TrajectoryDump {
    /// Recomputes the discounted return from the per-step rewards.
    pub fn resum(&self) -> f64 {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.r).collect();
        discounted_sum(&rewards, self.header.gamma)
    }
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn write_line<W: Write>(out: &mut W, line: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, line).map_err(|e| Error::Parse(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io("<trajectory dump>", e))
}

pub fn write_trajectory<W: Write>(out: &mut W, header: &TrajectoryHeader, paired: &PairedTrajectory) -> Result<()> {
    let t = &paired.trajectory;
    write_line(out, &TrajectoryLine::Header(header.clone()))?;
    for k in 0..t.horizon() {
        write_line(
            out,
            &TrajectoryLine::Step(StepRecord {
                k,
                s: to_vec(&t.states[k]),
                a: to_vec(&t.actions[k]),
                r: t.rewards[k],
                w: to_vec(&t.noise[k]),
                a_star: to_vec(&paired.oracle_actions[k]),
                gap: paired.gaps[k],
            }),
        )?;
    }
    write_line(
        out,
        &TrajectoryLine::Final(FinalRecord {
            k: t.horizon(),
            s: to_vec(&t.states[t.horizon()]),
            discounted_return: t.discounted_return,
            tail_bound: t.tail_bound,
        }),
    )
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<TrajectoryDump> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut last = None;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trajectory dump>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        match (parsed, header.is_some(), last.is_some()) {
            (TrajectoryLine::Header(h), false, _) => header = Some(h),
            (TrajectoryLine::Step(s), true, false) if s.k == steps.len() => steps.push(s),
            (TrajectoryLine::Final(f), true, false) => last = Some(f),
            _ => return Err(Error::Parse(format!("line {}: out of sequence", i + 1))),
        }
    }
    match (header, last) {
        (Some(header), Some(last)) => {
            if steps.len() != header.horizon || last.k != header.horizon {
                return Err(Error::LengthMismatch(format!(
                    "dump has {} steps, header says {}",
                    steps.len(),
                    header.horizon
                )));
            }
            Ok(TrajectoryDump { header, steps, last })
        }
        _ => Err(Error::Parse("dump is missing its header or final line".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseLine {
    Header {
        v: u32,
        seed: u64,
        dim: usize,
        trials: u64,
        horizon: usize,
    },
    Noise {
        trial: u64,
        k: usize,
        w: Vec<f64>,
    },
}

/// Pre-generated noise for `trials × horizon` steps, so another simulator can
/// replay exactly the same draws.
pub fn write_noise_dump<W: Write>(
    out: &mut W,
    noise: &NoiseStream,
    dim: usize,
    trials: u64,
    horizon: usize,
) -> Result<()> {
    write_line(
        out,
        &NoiseLine::Header {
            v: DUMP_VERSION,
            seed: noise.seed(),
            dim,
            trials,
            horizon,
        },
    )?;
    for trial in 0..trials {
        for k in 0..horizon {
            let w = noise.sample(trial, k as u64);
            write_line(
                out,
                &NoiseLine::Noise {
                    trial,
                    k,
                    w: to_vec(&w),
                },
            )?;
        }
    }
    Ok(())
}
