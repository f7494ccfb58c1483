use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::external::ExternalPolicy;
use crate::error::{Error, Result};
use crate::linalg::{serde_rows, Matrix, Vector};
use crate::qg::QgInstance;

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(10);

/// What a policy sees at one step. The oracle action is handed to built-in
/// policies so the rollout never solves for `a*` twice; external policies
/// only ever receive the state.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub trial: u64,
    pub step: usize,
    pub state: &'a Vector,
    pub oracle_action: &'a Vector,
}

pub trait Policy: Send {
    fn reset(&mut self, _trial: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Vector>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Oracle,
    /// `κ·a*(s)`.
    Scaled {
        kappa: f64,
    },
    Zero,
    /// `a = K s`.
    Linear {
        #[serde(with = "serde_rows")]
        gain: Matrix,
    },
    /// Subprocess speaking the line-delimited JSON protocol.
    External {
        command: String,
    },
}

impl PolicySpec {
    /// Parses `oracle | zero | scaled:<κ> | exec:<command>`. Linear gains come
    /// from a file, so they are built by the caller.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("oracle", None) => Ok(PolicySpec::Oracle),
            ("zero", None) => Ok(PolicySpec::Zero),
            ("scaled", Some(k)) => {
                let kappa: f64 = k
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad scale {k:?}")))?;
                if !kappa.is_finite() {
                    return Err(Error::NonFinite("policy scale"));
                }
                Ok(PolicySpec::Scaled { kappa })
            }
            ("exec", Some(cmd)) if !cmd.trim().is_empty() => Ok(PolicySpec::External {
                command: cmd.to_string(),
            }),
            _ => Err(Error::InvalidParameter(format!("unrecognised policy {s:?}"))),
        }
    }

    /// Built-in policies are pure functions of the state and may be shared
    /// across worker threads; external ones hold a process handle.
    pub fn is_builtin(&self) -> bool {
        !matches!(self, PolicySpec::External { .. })
    }

    pub fn instantiate(&self, inst: &QgInstance) -> Result<Box<dyn Policy>> {
        self.instantiate_with_timeout(inst, DEFAULT_QUERY_TIMEOUT)
    }

    pub fn instantiate_with_timeout(&self, inst: &QgInstance, timeout: Duration) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicySpec::Oracle => Box::new(ScaledOracle { kappa: 1.0 }),
            PolicySpec::Scaled { kappa } => Box::new(ScaledOracle { kappa: *kappa }),
            PolicySpec::Zero => Box::new(ZeroPolicy),
            PolicySpec::Linear { gain } => {
                if gain.shape() != (inst.m(), inst.n()) {
                    return Err(Error::InvalidParameter(format!(
                        "linear policy gain is {}x{}, expected {}x{}",
                        gain.nrows(),
                        gain.ncols(),
                        inst.m(),
                        inst.n()
                    )));
                }
                Box::new(LinearPolicy { gain: gain.clone() })
            }
            PolicySpec::External { command } => Box::new(ExternalPolicy::spawn(command, inst.m(), timeout)?),
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Oracle => f.write_str("oracle"),
            PolicySpec::Zero => f.write_str("zero"),
            PolicySpec::Scaled { kappa } => write!(f, "scaled:{kappa}"),
            PolicySpec::Linear { gain } => write!(f, "linear:{}x{}", gain.nrows(), gain.ncols()),
            PolicySpec::External { command } => write!(f, "exec:{command}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScaledOracle {
    pub kappa: f64,
}

impl Policy for ScaledOracle {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Vector> {
        if self.kappa == 1.0 {
            Ok(obs.oracle_action.clone())
        } else {
            Ok(obs.oracle_action * self.kappa)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Vector> {
        Ok(Vector::zeros(obs.oracle_action.len()))
    }
}

#[derive(Debug, Clone)]
pub struct LinearPolicy {
    pub gain: Matrix,
}

impl Policy for LinearPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Vector> {
        Ok(&self.gain * obs.state)
    }
}
