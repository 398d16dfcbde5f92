//! Runs hosted by the service, their engine threads and event logs.
//!
//! Every run is backed by `<data dir>/<run id>.jsonl`. On startup the data
//! directory is scanned and each journal is resumed; unfinished runs are
//! restarted, so manual runs reissue the same pending ids.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use aeromine_core::journal;
use aeromine_core::oracle::PendingStatus;
use aeromine_core::{
    EngineError, EvaluationRecord, ManualOracle, ManualQueue, Oracle, OracleKind, Run, RunConfig,
    RunEvent, RunMode, RunState, RunStatus, SyntheticOracle,
};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::watch;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("data directory {path}: {source}")]
    DataDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot start engine thread: {0}")]
    Spawn(std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// One entry of a run's event stream. Record and round events are numbered
/// and can be rebuilt from the journal; status and pending events are hints
/// about the current moment and carry no number.
#[derive(Debug, Clone)]
pub struct LoggedEvent {
    pub seq: Option<u64>,
    pub kind: &'static str,
    pub data: Value,
}

#[derive(Debug, Default)]
struct EventLog {
    entries: Vec<LoggedEvent>,
    last_seq: u64,
}

/// A run known to the service.
#[derive(Debug)]
pub struct RunHandle {
    pub run_id: String,
    pub journal_path: PathBuf,
    pub mode: RunMode,
    pub client_key: Option<String>,
    queue: Option<Arc<ManualQueue>>,
    snapshot: Mutex<Arc<RunState>>,
    log: Mutex<EventLog>,
    /// Number of log entries; bumped on every push to wake streams.
    log_len: watch::Sender<usize>,
    /// Pending ids issued for this run, including before a restart.
    issued: Mutex<HashSet<String>>,
    error: Mutex<Option<String>>,
    /// Set once the engine thread has exited and every event is logged.
    done: AtomicBool,
}

impl RunHandle {
    fn new(
        run_id: String,
        journal_path: PathBuf,
        client_key: Option<String>,
        state: RunState,
        issued: HashSet<String>,
    ) -> Self {
        let queue = (state.config.oracle == OracleKind::Manual).then(|| Arc::new(ManualQueue::new()));
        Self {
            run_id,
            journal_path,
            mode: state.mode,
            client_key,
            queue,
            snapshot: Mutex::new(Arc::new(state)),
            log: Mutex::new(EventLog::default()),
            log_len: watch::channel(0).0,
            issued: Mutex::new(issued),
            error: Mutex::new(None),
            done: AtomicBool::new(false),
        }
    }

    /// True once no further events will be logged.
    pub fn is_done(&self) -> bool {
        self.done.load(Ordering::SeqCst)
    }

    fn mark_done(&self) {
        self.done.store(true, Ordering::SeqCst);
        self.log_len.send_modify(|_| {});
    }

    pub fn config(&self) -> RunConfig {
        self.snapshot().config.clone()
    }

    /// The engine state as of the last event.
    pub fn snapshot(&self) -> Arc<RunState> {
        lock(&self.snapshot).clone()
    }

    pub fn status(&self) -> RunStatus {
        self.snapshot().status
    }

    pub fn queue(&self) -> Option<&Arc<ManualQueue>> {
        self.queue.as_ref()
    }

    pub fn error(&self) -> Option<String> {
        lock(&self.error).clone()
    }

    pub fn was_issued(&self, pending_id: &str) -> bool {
        lock(&self.issued).contains(pending_id)
    }

    /// Number of the most recent numbered event.
    pub fn last_seq(&self) -> u64 {
        lock(&self.log).last_seq
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.log_len.subscribe()
    }

    /// Log entries from index `from` on.
    pub fn events_from(&self, from: usize) -> Vec<LoggedEvent> {
        let log = lock(&self.log);
        log.entries.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Index of the first numbered entry after `seq`, and the log length.
    pub fn cursor_after(&self, seq: u64) -> (usize, usize) {
        let log = lock(&self.log);
        let idx = log
            .entries
            .iter()
            .position(|e| e.seq.is_some_and(|s| s > seq))
            .unwrap_or(log.entries.len());
        (idx, log.entries.len())
    }

    /// A record the engine has journaled for `pending_id`, if any.
    pub fn committed_record(&self, pending_id: &str) -> Option<EvaluationRecord> {
        self.snapshot()
            .records
            .iter()
            .find(|r| r.pending_id.as_deref() == Some(pending_id))
            .cloned()
    }

    /// Awaiting pending evaluations in issue order.
    pub fn pending(&self) -> Vec<Value> {
        let Some(queue) = &self.queue else {
            return Vec::new();
        };
        let state = self.snapshot();
        queue
            .awaiting()
            .into_iter()
            .map(|p| {
                let proposal = state.outstanding.iter().find(|o| o.pending_id() == p.pending_id);
                json!({
                    "pending_id": p.pending_id,
                    "round": proposal.map(|o| o.round),
                    "position": proposal.map(|o| o.position + 1),
                    "slot": proposal.map(|o| o.slot),
                    "configuration": p.configuration,
                    "issued_at": p.issued_at,
                    "status": PendingStatus::Awaiting,
                })
            })
            .collect()
    }

    fn push(&self, kind: &'static str, numbered: bool, mut data: Value) {
        let len = {
            let mut log = lock(&self.log);
            let seq = numbered.then(|| {
                log.last_seq += 1;
                log.last_seq
            });
            if let (Some(s), Some(obj)) = (seq, data.as_object_mut()) {
                obj.insert("seq".into(), json!(s));
            }
            log.entries.push(LoggedEvent { seq, kind, data });
            log.entries.len()
        };
        self.log_len.send_replace(len);
    }

    fn set_snapshot(&self, state: &RunState) {
        *lock(&self.snapshot) = Arc::new(state.clone());
    }

    fn observe(&self, event: &RunEvent<'_>, state: &RunState) {
        self.set_snapshot(state);
        let best = state.best_record().map(|r| r.fitness);
        match event {
            RunEvent::Pending(proposals) => {
                let ids: Vec<String> = proposals.iter().map(|p| p.pending_id()).collect();
                if self.queue.is_some() {
                    lock(&self.issued).extend(ids.iter().cloned());
                }
                self.push(
                    "pending",
                    false,
                    json!({ "round": state.round, "calls": state.calls(), "pending": ids }),
                );
            }
            RunEvent::Record(r) => self.push("record", true, record_event(r, state.calls(), best)),
            RunEvent::RoundComplete { round } => self.push(
                "round",
                true,
                json!({ "round": round, "calls": state.calls(), "best_fitness": best }),
            ),
            RunEvent::Status(s) => self.push("status", false, status_event(*s, state)),
        }
    }

    fn fail(&self, message: String) {
        *lock(&self.error) = Some(message.clone());
        let state = self.snapshot();
        let mut data = status_event(state.status, &state);
        data["error"] = json!(message);
        self.push("status", false, data);
    }

    /// Closes the manual queue, which cancels a waiting engine.
    pub fn shutdown(&self) {
        if let Some(q) = &self.queue {
            q.close();
        }
    }

    /// Replays the journaled records into numbered events.
    fn rebuild_events(&self, state: &RunState) {
        let mut best = f64::NEG_INFINITY;
        let records = &state.records;
        for (i, r) in records.iter().enumerate() {
            best = best.max(r.fitness);
            self.push("record", true, record_event(r, i as u64 + 1, Some(best)));
            let round_closed = match records.get(i + 1) {
                Some(next) => next.round > r.round,
                None => state.round > r.round,
            };
            if round_closed {
                self.push(
                    "round",
                    true,
                    json!({ "round": r.round, "calls": i + 1, "best_fitness": best }),
                );
            }
        }
    }
}

fn record_event(r: &EvaluationRecord, calls: u64, best: Option<f64>) -> Value {
    json!({
        "record_id": r.record_id,
        "round": r.round,
        "position": r.position,
        "slot": r.slot,
        "source": r.source,
        "fitness": r.fitness,
        "pending_id": r.pending_id,
        "calls": calls,
        "best_fitness": best,
    })
}

fn status_event(status: RunStatus, state: &RunState) -> Value {
    json!({ "status": status, "round": state.round, "calls": state.calls() })
}

enum EngineOracle {
    Synthetic(SyntheticOracle),
    Manual(ManualOracle),
}

impl EngineOracle {
    fn as_dyn(&self) -> &dyn Oracle {
        match self {
            EngineOracle::Synthetic(o) => o,
            EngineOracle::Manual(o) => o,
        }
    }
}

fn start_engine(handle: Arc<RunHandle>, mut run: Run) -> Result<(), RegistryError> {
    let config = &run.state().config;
    let oracle = match &handle.queue {
        Some(q) => EngineOracle::Manual(ManualOracle::new(q.clone())),
        None => EngineOracle::Synthetic(
            SyntheticOracle::new(&config.space, config.constants.clone())
                .map_err(EngineError::from)?,
        ),
    };
    std::thread::Builder::new()
        .name(format!("run-{}", handle.run_id))
        .spawn(move || {
            let mut observer = |e: &RunEvent<'_>, s: &RunState| handle.observe(e, s);
            match run.run_to_end(oracle.as_dyn(), &mut observer) {
                Ok(_) | Err(EngineError::Cancelled) => {}
                Err(e) => handle.fail(e.to_string()),
            }
            handle.mark_done();
        })
        .map_err(RegistryError::Spawn)?;
    Ok(())
}

/// All runs of one data directory.
#[derive(Debug)]
pub struct Registry {
    data_dir: PathBuf,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
    client_keys: Mutex<HashMap<String, String>>,
    /// Serializes run creation so one client key maps to one run.
    create: Mutex<()>,
    /// Journals that could not be resumed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Registry {
    /// Opens `data_dir`, creating it if needed, and resumes every journal in it.
    pub fn open(data_dir: &Path) -> Result<Self, RegistryError> {
        let io = |source| RegistryError::DataDir {
            path: data_dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(data_dir).map_err(io)?;
        let probe = data_dir.join(".aeromine-write-probe");
        std::fs::write(&probe, b"").map_err(io)?;
        std::fs::remove_file(&probe).map_err(io)?;

        let mut registry = Self {
            data_dir: data_dir.to_path_buf(),
            runs: Mutex::new(BTreeMap::new()),
            client_keys: Mutex::new(HashMap::new()),
            create: Mutex::new(()),
            skipped: Vec::new(),
        };
        let mut journals: Vec<PathBuf> = std::fs::read_dir(data_dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        journals.sort();
        for path in journals {
            if let Err(e) = registry.recover(&path) {
                registry.skipped.push((path, e.to_string()));
            }
        }
        Ok(registry)
    }

    fn recover(&self, path: &Path) -> Result<(), RegistryError> {
        let run_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let loaded = journal::load(path).map_err(EngineError::from)?;
        let client_key = loaded.header.client_key.clone();
        let issued: HashSet<String> = loaded.pending().map(|p| p.pending_id.clone()).collect();
        let run = Run::resume(path)?;
        let state = run.state().clone();
        let handle = Arc::new(RunHandle::new(
            run_id.clone(),
            path.to_path_buf(),
            client_key.clone(),
            state.clone(),
            issued,
        ));
        handle.rebuild_events(&state);
        if run.is_done() {
            handle.mark_done();
        } else {
            start_engine(handle.clone(), run)?;
        }
        self.insert(handle, client_key);
        Ok(())
    }

    fn insert(&self, handle: Arc<RunHandle>, client_key: Option<String>) {
        if let Some(k) = client_key {
            lock(&self.client_keys).insert(k, handle.run_id.clone());
        }
        lock(&self.runs).insert(handle.run_id.clone(), handle);
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn get(&self, run_id: &str) -> Option<Arc<RunHandle>> {
        lock(&self.runs).get(run_id).cloned()
    }

    pub fn list(&self) -> Vec<Arc<RunHandle>> {
        lock(&self.runs).values().cloned().collect()
    }

    /// Starts a new journaled run. With a client key already used, returns
    /// the existing run and `false`.
    pub fn start(
        &self,
        config: RunConfig,
        mode: RunMode,
        client_key: Option<String>,
    ) -> Result<(Arc<RunHandle>, bool), RegistryError> {
        let _guard = lock(&self.create);
        if let Some(k) = &client_key {
            let existing = lock(&self.client_keys).get(k).cloned();
            if let Some(handle) = existing.and_then(|id| self.get(&id)) {
                return Ok((handle, false));
            }
        }
        let run_id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.data_dir.join(format!("{run_id}.jsonl"));
        let run = Run::create(config, mode, &path, client_key.clone())?;
        let handle = Arc::new(RunHandle::new(
            run_id,
            path,
            client_key.clone(),
            run.state().clone(),
            HashSet::new(),
        ));
        start_engine(handle.clone(), run)?;
        self.insert(handle.clone(), client_key);
        Ok((handle, true))
    }

    /// Closes every manual queue so waiting engines stop.
    pub fn shutdown(&self) {
        for h in self.list() {
            h.shutdown();
        }
    }
}
