//! Line-delimited JSON policy protocol.
//!
//! ```text
//! → {"v":1,"type":"reset","trial":3}
//! → {"v":1,"type":"act","state":[0.1,-0.2]}
//! ← {"v":1,"type":"action","action":[0.05]}
//! ```
//!
//! Resets are not acknowledged. Every `act` gets exactly one `action` line.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::policy::{Observation, Policy};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::qg::QgInstance;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireBody {
    Reset { trial: u64 },
    Act { state: Vec<f64> },
    Action { action: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
    #[serde(flatten)]
    pub body: WireBody,
}

impl WireMessage {
    pub fn new(body: WireBody) -> Self {
        Self {
            v: Some(PROTOCOL_VERSION),
            body,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("wire messages always serialize");
        line.push('\n');
        line
    }
}

/// A policy served by a child process over stdin/stdout.
pub struct ExternalPolicy {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    action_dim: usize,
    timeout: Duration,
}

impl ExternalPolicy {
    pub fn spawn(command: &str, action_dim: usize, timeout: Duration) -> Result<Self> {
        let mut child = shell(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::PolicyFailure(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout was piped");

        // A reader thread turns the blocking pipe into something we can wait
        // on with a deadline.
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        Ok(Self {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            action_dim,
            timeout,
        })
    }

    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::PolicyFailure("policy stdin closed".into()))?;
        stdin
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::PolicyFailure(format!("{}: write failed: {e}", self.command)))
    }

    fn receive(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::PolicyFailure(format!("{}: read failed: {e}", self.command))),
            Err(RecvTimeoutError::Timeout) => Err(Error::PolicyFailure(format!(
                "{}: no response within {:?}",
                self.command, self.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::PolicyFailure(format!(
                "{}: process closed its output",
                self.command
            ))),
        }
    }
}

impl Policy for ExternalPolicy {
    fn reset(&mut self, trial: u64) -> Result<()> {
        self.send(&WireMessage::new(WireBody::Reset { trial }))
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Vector> {
        self.send(&WireMessage::new(WireBody::Act {
            state: obs.state.iter().copied().collect(),
        }))?;
        let line = self.receive()?;
        let action = parse_action(&line, self.action_dim)?;
        Ok(Vector::from_vec(action))
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        // closing stdin lets well-behaved servers exit on their own
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn shell(command: &str) -> Command {
    if cfg!(windows) {
        let mut c = Command::new("cmd");
        c.args(["/C", command]);
        c
    } else {
        let mut c = Command::new("sh");
        c.args(["-c", command]);
        c
    }
}

pub fn parse_action(line: &str, action_dim: usize) -> Result<Vec<f64>> {
    let msg: WireMessage =
        serde_json::from_str(line).map_err(|e| Error::PolicyFailure(format!("malformed response {line:?}: {e}")))?;
    if msg.v != Some(PROTOCOL_VERSION) {
        return Err(Error::PolicyFailure(format!(
            "response has protocol version {:?}, expected {PROTOCOL_VERSION}",
            msg.v
        )));
    }
    match msg.body {
        WireBody::Action { action } => {
            if action.len() != action_dim {
                Err(Error::PolicyFailure(format!(
                    "action has {} entries, expected {action_dim}",
                    action.len()
                )))
            } else if action.iter().any(|a| !a.is_finite()) {
                Err(Error::PolicyFailure("action contains non-finite entries".into()))
            } else {
                Ok(action)
            }
        }
        other => Err(Error::PolicyFailure(format!("expected an action, got {other:?}"))),
    }
}

/// Serves `policy` on `instance` until the reader hits end of input. Returns
/// the number of actions sent. This is the other end of [`ExternalPolicy`].
pub fn serve_policy<R: BufRead, W: Write>(
    instance: &QgInstance,
    policy: &mut dyn Policy,
    reader: R,
    mut writer: W,
) -> Result<usize> {
    let mut trial = 0;
    let mut step = 0;
    let mut served = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::PolicyFailure(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: WireMessage = serde_json::from_str(&line)
            .map_err(|e| Error::PolicyFailure(format!("malformed request {line:?}: {e}")))?;
        if matches!(msg.v, Some(v) if v != PROTOCOL_VERSION) {
            return Err(Error::PolicyFailure(format!(
                "unsupported protocol version {:?}",
                msg.v
            )));
        }
        match msg.body {
            WireBody::Reset { trial: t } => {
                trial = t;
                step = 0;
                policy.reset(t)?;
            }
            WireBody::Act { state } => {
                if state.len() != instance.n() {
                    return Err(Error::PolicyFailure(format!(
                        "state has {} entries, expected {}",
                        state.len(),
                        instance.n()
                    )));
                }
                let s = Vector::from_vec(state);
                let a_star = instance.optimal_action(&s)?;
                let a = policy.act(&Observation {
                    trial,
                    step,
                    state: &s,
                    oracle_action: &a_star,
                })?;
                let reply = WireMessage::new(WireBody::Action {
                    action: a.iter().copied().collect(),
                });
                writer
                    .write_all(reply.to_line().as_bytes())
                    .and_then(|_| writer.flush())
                    .map_err(|e| Error::PolicyFailure(format!("write failed: {e}")))?;
                step += 1;
                served += 1;
            }
            WireBody::Action { .. } => return Err(Error::PolicyFailure("server received an action".into())),
        }
    }
    Ok(served)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qg::testutil::s1;
    use crate::sim::policy::ScaledOracle;

    #[test]
    fn wire_format() {
        let act = WireMessage::new(WireBody::Act { state: vec![0.5, -1.0] });
        assert_eq!(act.to_line(), "{\"v\":1,\"type\":\"act\",\"state\":[0.5,-1.0]}\n");
        let reset: WireMessage = serde_json::from_str(r#"{"type":"reset","trial":4}"#).unwrap();
        assert_eq!(reset.body, WireBody::Reset { trial: 4 });
    }

    #[test]
    fn action_parsing_rejects_malformed_responses() {
        assert_eq!(
            parse_action(r#"{"v":1,"type":"action","action":[1.5]}"#, 1).unwrap(),
            vec![1.5]
        );
        for bad in [
            "",
            "not json",
            r#"{"type":"action","action":[1.5]}"#,
            r#"{"v":2,"type":"action","action":[1.5]}"#,
            r#"{"v":1,"type":"action","action":[1.5, 2.0]}"#,
            r#"{"v":1,"type":"action","action":["x"]}"#,
            r#"{"v":1,"type":"act","state":[1.5]}"#,
        ] {
            assert!(matches!(parse_action(bad, 1), Err(Error::PolicyFailure(_))), "{bad:?}");
        }
    }

    #[test]
    fn server_answers_every_act() {
        let inst = s1();
        let input = [
            WireMessage::new(WireBody::Reset { trial: 0 }).to_line(),
            WireMessage::new(WireBody::Act { state: vec![1.0] }).to_line(),
            WireMessage::new(WireBody::Act { state: vec![0.0] }).to_line(),
        ]
        .concat();
        let mut out = Vec::new();
        let mut policy = ScaledOracle { kappa: 1.0 };
        let served = serve_policy(&inst, &mut policy, input.as_bytes(), &mut out).unwrap();
        assert_eq!(served, 2);
        let text = String::from_utf8(out).unwrap();
        let replies: Vec<_> = text.lines().map(|l| parse_action(l, 1).unwrap()).collect();
        assert_eq!(
            replies[0][0],
            inst.optimal_action(&Vector::from_element(1, 1.0)).unwrap()[0]
        );
        assert_eq!(replies[1][0], 0.0);
    }

    #[test]
    fn server_rejects_wrong_state_length() {
        let input = WireMessage::new(WireBody::Act { state: vec![1.0, 2.0] }).to_line();
        let mut policy = ScaledOracle { kappa: 1.0 };
        let r = serve_policy(&s1(), &mut policy, input.as_bytes(), Vec::new());
        assert!(matches!(r, Err(Error::PolicyFailure(_))));
    }

    #[cfg(unix)]
    #[test]
    fn unresponsive_process_times_out() {
        let mut p = ExternalPolicy::spawn("cat > /dev/null", 1, Duration::from_millis(200)).unwrap();
        let s = Vector::from_element(1, 1.0);
        let obs = Observation {
            trial: 0,
            step: 0,
            state: &s,
            oracle_action: &s,
        };
        assert!(matches!(p.act(&obs), Err(Error::PolicyFailure(_))));
    }

    #[cfg(unix)]
    #[test]
    fn garbage_output_is_a_policy_failure() {
        let mut p = ExternalPolicy::spawn("while read l; do echo nope; done", 1, Duration::from_secs(5)).unwrap();
        let s = Vector::from_element(1, 1.0);
        let obs = Observation {
            trial: 0,
            step: 0,
            state: &s,
            oracle_action: &s,
        };
        assert!(matches!(p.act(&obs), Err(Error::PolicyFailure(_))));
    }
}
