//! Event-sourced session persistence.
//!
//! Each session lives in its own directory: `config.json`, the accepted
//! command log `log.jsonl`, and two caches, `snapshot.json` and the last
//! inference report. A session is rebuilt from config and log alone. Every
//! file is replaced by write-then-rename, so a log line is either fully
//! present or absent.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use trialflow_core::diagram::ModelDocument;
use trialflow_core::flow::FlowDocument;
use trialflow_core::inference::{analyze, InferenceReport, ModeOptions};
use trialflow_core::session::{
    Command, DirectiveOutcome, PriorRequest, Session, SessionConfig, SessionStatus,
};

use crate::error::ApiError;
use crate::export::{export_session, ExportKind};
use crate::requests::{DirectiveRequest, PriorBody};

/// Overrides the default data directory.
pub const DATA_DIR_ENV: &str = "TRIALFLOW_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "trialflow-data";

const CONFIG_FILE: &str = "config.json";
const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const REPORT_FILE: &str = "report.json";
const REPORT_META_FILE: &str = "report.meta.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    fn from_seq(n: u64) -> Self {
        SessionId(format!("s{n}"))
    }

    fn seq(s: &str) -> Option<u64> {
        let digits = s.strip_prefix('s')?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }

    /// Accepts only store-issued ids, so an id can never name a path
    /// outside the store.
    pub fn parse(s: &str) -> Result<Self, ApiError> {
        Self::seq(s).map(|_| SessionId(s.to_string())).ok_or_else(|| ApiError::not_found(format!("unknown session {s:?}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: SessionId,
    pub status: SessionStatus,
    pub config: SessionConfig,
    pub pending_priors: Vec<PriorRequest>,
    pub log_len: usize,
    pub model: ModelDocument,
    pub flow: FlowDocument,
}

#[derive(Debug, Clone, Serialize)]
struct Snapshot<'a> {
    status: SessionStatus,
    log_len: usize,
    pending_priors: &'a [PriorRequest],
    model: ModelDocument,
    flow: FlowDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ReportMeta {
    log_len: usize,
    seed: u64,
}

fn io_err(context: &str, path: &Path, e: std::io::Error) -> ApiError {
    ApiError::invalid(format!("{context} {}: {e}", path.display()))
}

/// Writes `bytes` to a sibling temp file, syncs it, and renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err("cannot create", &tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err("cannot write", &tmp, e))?;
    f.sync_all().map_err(|e| io_err("cannot sync", &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err("cannot replace", path, e))
}

pub fn log_to_jsonl(log: &[Command]) -> String {
    let mut out = String::new();
    for cmd in log {
        out.push_str(&serde_json::to_string(cmd).expect("commands serialize"));
        out.push('\n');
    }
    out
}

pub fn log_from_jsonl(text: &str) -> Result<Vec<Command>, ApiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ApiError::invalid(format!("log line {}: {e}", i + 1))))
        .collect()
}

type Shared = Arc<Mutex<Session>>;

pub struct SessionStore {
    root: PathBuf,
    sessions: Mutex<HashMap<SessionId, Shared>>,
    next: Mutex<u64>,
    options: ModeOptions,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ApiError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err("cannot create", &root, e))?;
        let mut max = 0;
        for entry in fs::read_dir(&root).map_err(|e| io_err("cannot read", &root, e))? {
            let entry = entry.map_err(|e| io_err("cannot read", &root, e))?;
            if let Some(n) = entry.file_name().to_str().and_then(SessionId::seq) {
                max = max.max(n);
            }
        }
        Ok(SessionStore {
            root,
            sessions: Mutex::new(HashMap::new()),
            next: Mutex::new(max + 1),
            options: ModeOptions::default(),
        })
    }

    pub fn with_options(mut self, options: ModeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &SessionId) -> PathBuf {
        self.root.join(id.as_str())
    }

    pub fn create(&self, config: SessionConfig) -> Result<SessionId, ApiError> {
        self.create_with_log(config, &[])
    }

    /// Creates a session by replaying an already accepted log.
    pub fn create_with_log(&self, config: SessionConfig, log: &[Command]) -> Result<SessionId, ApiError> {
        config.utility.validate()?;
        let session = Session::replay(config, log)?;
        let id = {
            let mut next = self.next.lock().expect("id lock");
            let id = SessionId::from_seq(*next);
            *next += 1;
            id
        };
        let dir = self.session_dir(&id);
        fs::create_dir(&dir).map_err(|e| io_err("cannot create", &dir, e))?;
        let config_json = serde_json::to_string_pretty(session.config()).expect("config serializes");
        atomic_write(&dir.join(CONFIG_FILE), config_json.as_bytes())?;
        self.persist(&id, &session)?;
        self.sessions.lock().expect("store lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn persist(&self, id: &SessionId, session: &Session) -> Result<(), ApiError> {
        let dir = self.session_dir(id);
        atomic_write(&dir.join(LOG_FILE), log_to_jsonl(session.log()).as_bytes())?;
        let snap = Snapshot {
            status: session.status(),
            log_len: session.log().len(),
            pending_priors: session.pending_priors(),
            model: session.diagram().to_document(),
            flow: session.flow().to_document(),
        };
        atomic_write(&dir.join(SNAPSHOT_FILE), serde_json::to_string_pretty(&snap).expect("snapshot").as_bytes())
    }

    /// Rebuilds a session from its config and log on disk.
    pub fn load_from_disk(&self, id: &SessionId) -> Result<Session, ApiError> {
        let dir = self.session_dir(id);
        let config_text = fs::read_to_string(dir.join(CONFIG_FILE))
            .map_err(|_| ApiError::not_found(format!("unknown session {id}")))?;
        let config: SessionConfig = serde_json::from_str(&config_text)
            .map_err(|e| ApiError::invalid(format!("corrupt config for {id}: {e}")))?;
        let log = match fs::read_to_string(dir.join(LOG_FILE)) {
            Ok(text) => log_from_jsonl(&text)?,
            Err(_) => Vec::new(),
        };
        Ok(Session::replay(config, &log)?)
    }

    fn shared(&self, id: &SessionId) -> Result<Shared, ApiError> {
        if let Some(s) = self.sessions.lock().expect("store lock").get(id) {
            return Ok(s.clone());
        }
        let session = self.load_from_disk(id)?;
        let mut map = self.sessions.lock().expect("store lock");
        Ok(map.entry(id.clone()).or_insert_with(|| Arc::new(Mutex::new(session))).clone())
    }

    /// Drops the in-memory copy; the next access replays from disk.
    pub fn evict(&self, id: &SessionId) {
        self.sessions.lock().expect("store lock").remove(id);
    }

    pub fn with_session<R>(&self, id: &SessionId, f: impl FnOnce(&Session) -> R) -> Result<R, ApiError> {
        let shared = self.shared(id)?;
        let guard = shared.lock().expect("session lock");
        Ok(f(&guard))
    }

    /// Runs `f` on a copy and commits it (memory and disk) only on success.
    fn mutate<R>(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut Session) -> Result<R, ApiError>,
    ) -> Result<R, ApiError> {
        let shared = self.shared(id)?;
        let mut guard = shared.lock().expect("session lock");
        let mut scratch = guard.clone();
        let out = f(&mut scratch)?;
        if scratch.log().len() != guard.log().len() {
            self.persist(id, &scratch)?;
            *guard = scratch;
        }
        Ok(out)
    }

    pub fn view(&self, id: &SessionId) -> Result<SessionView, ApiError> {
        self.with_session(id, |s| SessionView {
            id: id.clone(),
            status: s.status(),
            config: s.config().clone(),
            pending_priors: s.pending_priors().to_vec(),
            log_len: s.log().len(),
            model: s.diagram().to_document(),
            flow: s.flow().to_document(),
        })
    }

    pub fn post_directive(&self, id: &SessionId, req: &DirectiveRequest) -> Result<Vec<PriorRequest>, ApiError> {
        self.mutate(id, |s| {
            let directive = req.resolve(s)?;
            match s.apply_directive(directive)? {
                DirectiveOutcome::Applied { prior_requests } => Ok(prior_requests),
                DirectiveOutcome::Denied { reason } => Err(ApiError::denied(reason)),
            }
        })
    }

    pub fn pending_priors(&self, id: &SessionId) -> Result<Vec<PriorRequest>, ApiError> {
        self.with_session(id, |s| s.pending_priors().to_vec())
    }

    pub fn set_priors(&self, id: &SessionId, bodies: &[PriorBody]) -> Result<SessionStatus, ApiError> {
        if bodies.is_empty() {
            return Err(ApiError::invalid("no prior assignments given"));
        }
        self.mutate(id, |s| {
            let assignments = bodies.iter().map(|b| b.resolve(s)).collect::<Result<Vec<_>, _>>()?;
            Ok(s.set_priors(&assignments)?)
        })
    }

    /// Runs inference and caches the report next to the log. Expected
    /// utility is reported only once the session is finished.
    pub fn infer(&self, id: &SessionId, seed: u64) -> Result<InferenceReport, ApiError> {
        let (report, log_len) = self.with_session(id, |s| -> Result<_, ApiError> {
            let model = s.reduced_model()?;
            let options = ModeOptions { seed, ..self.options };
            let mut report = analyze(&model, &options, &s.config().utility)?;
            if s.status() != SessionStatus::Finished {
                report.expected_utility = None;
            }
            Ok((report, s.log().len()))
        })??;
        let dir = self.session_dir(id);
        atomic_write(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
        let meta = serde_json::to_string(&ReportMeta { log_len, seed }).expect("meta");
        atomic_write(&dir.join(REPORT_META_FILE), meta.as_bytes())?;
        Ok(report)
    }

    /// The cached report if it matches the current log, else a fresh run
    /// with the default seed.
    pub fn report_json(&self, id: &SessionId) -> Result<String, ApiError> {
        let log_len = self.with_session(id, |s| s.log().len())?;
        let dir = self.session_dir(id);
        let meta: Option<ReportMeta> = fs::read_to_string(dir.join(REPORT_META_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        if meta.is_some_and(|m| m.log_len == log_len) {
            if let Ok(text) = fs::read_to_string(dir.join(REPORT_FILE)) {
                return Ok(text);
            }
        }
        Ok(self.infer(id, self.options.seed)?.to_json())
    }

    pub fn export(&self, id: &SessionId, kind: ExportKind) -> Result<String, ApiError> {
        match self.with_session(id, |s| export_session(s, kind))? {
            Some(text) => Ok(text),
            None => self.report_json(id),
        }
    }

    pub fn log(&self, id: &SessionId) -> Result<Vec<Command>, ApiError> {
        self.with_session(id, |s| s.log().to_vec())
    }
}
