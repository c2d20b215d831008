//! Directive scripts: JSON lines, `#` comments and blank lines ignored.
//!
//! ```text
//! {"kind":"Session","trial_name":"aspirin","exp_count":100,"ctl_count":100}
//! {"kind":"SetPrior","param_name":"mortality rate in experimental population","mean":0.2,"ess":10}
//! {"kind":"Withdraw","target_name":"patients assigned to experimental therapy"}
//! {"kind":"AttachEvidence","target_name":"...","payload":{"successes":3,"trials":40}}
//! {"kind":"Finish"}
//! ```
//!
//! Fields under `payload` are merged into the line before parsing.

use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;
use trialflow_core::inference::InferenceReport;
use trialflow_core::session::{DirectiveOutcome, Session, SessionConfig};

use crate::error::ApiError;
use crate::requests::{DirectiveRequest, PriorBody};
use crate::store::{SessionId, SessionStore};

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    SetPrior(PriorBody),
    Directive(DirectiveRequest),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub config: SessionConfig,
    /// Steps with their 1-based line numbers.
    pub steps: Vec<(usize, Step)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {error}")]
    Rejected { line: usize, error: ApiError },
    #[error("line {line}: denied: {reason}")]
    Denied { line: usize, reason: String },
    #[error("{0}")]
    Store(ApiError),
}

impl ScriptError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScriptError::Denied { .. } => 2,
            _ => 1,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ScriptError::Parse { line, .. } | ScriptError::Rejected { line, .. } | ScriptError::Denied { line, .. } => {
                Some(*line)
            }
            _ => None,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Parse { line, message: message.into() }
}

fn flatten_payload(mut obj: Map<String, Value>, line: usize) -> Result<Map<String, Value>, ScriptError> {
    match obj.remove("payload") {
        None | Some(Value::Null) => Ok(obj),
        Some(Value::Object(payload)) => {
            for (k, v) in payload {
                if obj.contains_key(&k) {
                    return Err(parse_err(line, format!("field {k:?} given twice")));
                }
                obj.insert(k, v);
            }
            Ok(obj)
        }
        Some(_) => Err(parse_err(line, "payload must be an object")),
    }
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut config = None;
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let value: Value = serde_json::from_str(trimmed).map_err(|e| parse_err(line, e.to_string()))?;
            let Value::Object(obj) = value else {
                return Err(parse_err(line, "expected a JSON object"));
            };
            let mut obj = flatten_payload(obj, line)?;
            let kind = match obj.get("kind") {
                Some(Value::String(k)) => k.clone(),
                _ => return Err(parse_err(line, "missing \"kind\"")),
            };
            if config.is_none() {
                if kind != "Session" {
                    return Err(parse_err(line, "the first line must be a Session line"));
                }
                obj.remove("kind");
                let c: SessionConfig =
                    serde_json::from_value(Value::Object(obj)).map_err(|e| parse_err(line, e.to_string()))?;
                config = Some(c);
                continue;
            }
            let step = match kind.as_str() {
                "Session" => return Err(parse_err(line, "only one Session line is allowed")),
                "SetPrior" => {
                    obj.remove("kind");
                    Step::SetPrior(serde_json::from_value(Value::Object(obj)).map_err(|e| parse_err(line, e.to_string()))?)
                }
                _ => Step::Directive(
                    serde_json::from_value(Value::Object(obj)).map_err(|e| parse_err(line, e.to_string()))?,
                ),
            };
            steps.push((line, step));
        }
        let config = config.ok_or_else(|| parse_err(1, "script has no Session line"))?;
        Ok(Script { config, steps })
    }

    pub fn read(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Runs every step in memory, stopping at the first rejected line.
    pub fn execute(&self) -> Result<Session, ScriptError> {
        self.config.utility.validate().map_err(|e| ScriptError::Rejected { line: 1, error: e.into() })?;
        let mut session =
            Session::new(self.config.clone()).map_err(|e| ScriptError::Rejected { line: 1, error: e.into() })?;
        for (line, step) in &self.steps {
            let line = *line;
            let rejected = |error: ApiError| ScriptError::Rejected { line, error };
            match step {
                Step::SetPrior(body) => {
                    let asg = body.resolve(&session).map_err(rejected)?;
                    session.set_priors(&[asg]).map_err(|e| rejected(e.into()))?;
                }
                Step::Directive(req) => {
                    let d = req.resolve(&session).map_err(rejected)?;
                    match session.apply_directive(d).map_err(|e| rejected(e.into()))? {
                        DirectiveOutcome::Applied { .. } => {}
                        DirectiveOutcome::Denied { reason } => return Err(ScriptError::Denied { line, reason }),
                    }
                }
            }
        }
        Ok(session)
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub session: SessionId,
    pub report: InferenceReport,
}

impl Analysis {
    /// 0 on success, 3 when the optimizer did not converge.
    pub fn exit_code(&self) -> i32 {
        if self.report.converged {
            0
        } else {
            3
        }
    }
}

/// Executes a script, persists the resulting session and runs inference.
pub fn run_script(script: &Script, store: &SessionStore, seed: u64) -> Result<Analysis, ScriptError> {
    let session = script.execute()?;
    let id = store.create_with_log(script.config.clone(), session.log()).map_err(ScriptError::Store)?;
    let report = store.infer(&id, seed).map_err(ScriptError::Store)?;
    Ok(Analysis { session: id, report })
}
