//! Client side of the external trainer process: one JSON request per line on its
//! stdin, one JSON response per line on its stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::archspec::{width_units, ArchSpec};
use crate::error::{Error, Result};
use crate::projection::DatasetSpec;

use super::{EvaluationResult, Evaluator, EvaluatorBudget};

/// Names the shell command that starts the trainer process.
pub const EVALUATOR_CMD_ENV: &str = "WIDTHFORGE_EVALUATOR_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub request_id: String,
    pub arch: ArchSpec,
    pub dataset: DatasetSpec,
    pub dataset_id: String,
    pub split_seed: u64,
    pub budget: EvaluatorBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub request_id: String,
    #[serde(default)]
    pub accuracy_proxy: f64,
    #[serde(default)]
    pub channel_scores: Vec<Vec<f64>>,
    #[serde(default)]
    pub cost_flops: u128,
    #[serde(default)]
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.wait();
    }
}

/// Serial-only evaluator backed by a spawned trainer process.
pub struct BridgeEvaluator {
    command: String,
    dataset_id: String,
    split_seed: u64,
    session: Mutex<Option<Session>>,
}

impl BridgeEvaluator {
    pub fn new(command: impl Into<String>, dataset_id: impl Into<String>, split_seed: u64) -> Self {
        BridgeEvaluator {
            command: command.into(),
            dataset_id: dataset_id.into(),
            split_seed,
            session: Mutex::new(None),
        }
    }

    /// Reads the command from the environment.
    pub fn from_env(dataset_id: impl Into<String>, split_seed: u64) -> Result<Self> {
        let command = std::env::var(EVALUATOR_CMD_ENV)
            .ok()
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| Error::Evaluator(format!("{EVALUATOR_CMD_ENV} is not set")))?;
        Ok(Self::new(command, dataset_id, split_seed))
    }

    fn spawn(&self) -> Result<Session> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Evaluator(format!("cannot start `{}`: {e}", self.command)))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Session {
            child,
            stdin,
            stdout,
            next_id: 0,
        })
    }

    fn round_trip(session: &mut Session, request: &BridgeRequest) -> Result<BridgeResponse> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        let stdin = session.stdin.as_mut().expect("stdin open while session lives");
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Evaluator(format!("bridge write failed: {e}")))?;
        let mut reply = String::new();
        let n = session
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Evaluator(format!("bridge read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Evaluator("bridge closed its output".into()));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Evaluator(format!("malformed bridge response: {e}")))
    }
}

impl Evaluator for BridgeEvaluator {
    fn evaluate(&self, arch: &ArchSpec, ds: &DatasetSpec, budget: &EvaluatorBudget) -> Result<EvaluationResult> {
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let session = guard.as_mut().expect("session just created");
        let request = BridgeRequest {
            request_id: format!("req-{}", session.next_id),
            arch: arch.clone(),
            dataset: ds.clone(),
            dataset_id: self.dataset_id.clone(),
            split_seed: self.split_seed,
            budget: *budget,
        };
        session.next_id += 1;
        let response = match Self::round_trip(session, &request) {
            Ok(r) => r,
            Err(e) => {
                // A broken pipe leaves no usable session.
                *guard = None;
                return Err(e);
            }
        };
        if response.request_id != request.request_id {
            return Err(Error::Evaluator(format!(
                "bridge answered `{}` to request `{}`",
                response.request_id, request.request_id
            )));
        }
        if let Some(msg) = response.error {
            return Err(Error::Evaluator(format!("bridge error for `{}`: {msg}", request.request_id)));
        }
        let expected: Vec<u64> = width_units(arch)?.iter().map(|u| u.base_channels).collect();
        let shapes_ok = response.channel_scores.len() == expected.len()
            && response.channel_scores.iter().zip(&expected).all(|(s, &c)| s.len() as u64 == c);
        if !shapes_ok {
            return Err(Error::Evaluator(format!(
                "bridge channel scores do not match the unit widths for `{}`",
                request.request_id
            )));
        }
        Ok(EvaluationResult {
            accuracy_proxy: if response.diverged { 0.0 } else { response.accuracy_proxy },
            channel_scores: response.channel_scores,
            cost_flops: response.cost_flops,
        })
    }

    fn concurrent(&self) -> bool {
        false
    }
}
