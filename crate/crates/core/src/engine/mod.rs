//! The design-mining loop.
//!
//! Each array position owns an archive of evaluated arrays, fits its own
//! surrogate on it and proposes designs for its slot, evaluated in the context
//! of the other positions' elites. Rounds are synchronous: every position
//! proposes from the same round-start snapshot, results are merged in a
//! single-threaded step, then the next round begins.

mod codec;
mod config;
mod state;

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::journal::{
    self, EvaluationRecord, JournalError, JournalHeader, JournalWriter, PendingNotice,
};
use crate::optimizer::OptimizerError;
use crate::oracle::{ArrayConfiguration, Oracle, OracleError, Provenance, QueueError};
use crate::space::{join_violations, SpaceError, Violation};
use crate::surrogate::SurrogateError;

pub use codec::Codec;
pub use config::{OracleKind, Pin, RunConfig, RunMode, SeedDesign, MAX_POSITIONS};
pub use state::{Proposal, RunState, RunStatus};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Config(Vec<Violation>),
    #[error("position {0} has no elite")]
    MissingElite(usize),
    #[error("journal does not match the run at record {record_id}: {reason}")]
    Mismatch { record_id: u64, reason: String },
    #[error("journal was written for a different design space")]
    SpaceMismatch,
    #[error("run cancelled")]
    Cancelled,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Progress notifications. Each carries the state after the change.
#[derive(Debug, Clone)]
pub enum RunEvent<'a> {
    /// Configurations handed to the oracle for the current round.
    Pending(&'a [Proposal]),
    Record(&'a EvaluationRecord),
    RoundComplete { round: u64 },
    Status(RunStatus),
}

pub trait RunObserver {
    fn on_event(&mut self, event: &RunEvent<'_>, state: &RunState);
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl RunObserver for NoObserver {
    fn on_event(&mut self, _event: &RunEvent<'_>, _state: &RunState) {}
}

impl<F: FnMut(&RunEvent<'_>, &RunState)> RunObserver for F {
    fn on_event(&mut self, event: &RunEvent<'_>, state: &RunState) {
        self(event, state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub best_configuration: Option<ArrayConfiguration>,
    pub best_fitness: Option<f64>,
    pub calls: u64,
    /// Mining rounds completed, not counting seeding.
    pub rounds: u64,
    /// Best fitness after each oracle call.
    pub best_trace: Vec<f64>,
}

impl RunResult {
    pub fn of(state: &RunState) -> Self {
        let mut best = f64::NEG_INFINITY;
        let best_trace = state
            .records
            .iter()
            .map(|r| {
                best = best.max(r.fitness);
                best
            })
            .collect();
        Self {
            status: state.status,
            best_configuration: state.best_record().map(|r| r.configuration.clone()),
            best_fitness: state.best_record().map(|r| r.fitness),
            calls: state.calls(),
            rounds: state.round.saturating_sub(1),
            best_trace,
        }
    }

    /// Oracle calls spent before the best fitness first reached `target`.
    pub fn calls_to_reach(&self, target: f64) -> Option<u64> {
        self.best_trace
            .iter()
            .position(|&b| b >= target)
            .map(|i| i as u64 + 1)
    }
}

/// A run in progress, optionally backed by a journal.
#[derive(Debug)]
pub struct Run {
    state: RunState,
    journal: Option<JournalWriter>,
    journaled_pending: HashSet<String>,
}

impl Run {
    /// A run that keeps its records in memory only.
    pub fn in_memory(config: RunConfig, mode: RunMode) -> Result<Self, EngineError> {
        Ok(Self {
            state: RunState::new(config, mode)?,
            journal: None,
            journaled_pending: HashSet::new(),
        })
    }

    /// Starts a new journaled run; the journal file must not exist yet.
    pub fn create(
        config: RunConfig,
        mode: RunMode,
        path: &Path,
        client_key: Option<String>,
    ) -> Result<Self, EngineError> {
        let state = RunState::new(config, mode)?;
        let mut header = JournalHeader::new(&state.config, mode);
        header.client_key = client_key;
        let journal = JournalWriter::create(path, &header)?;
        Ok(Self {
            state,
            journal: Some(journal),
            journaled_pending: HashSet::new(),
        })
    }

    /// Reopens a journaled run and rebuilds its state from the records.
    pub fn resume(path: &Path) -> Result<Self, EngineError> {
        let (journal, loaded) = JournalWriter::open(path)?;
        let header = loaded.header.clone();
        if header.space_fingerprint != journal::space_fingerprint(&header.config.space) {
            return Err(EngineError::SpaceMismatch);
        }
        let journaled_pending = loaded.pending().map(|p| p.pending_id.clone()).collect();
        let records: Vec<EvaluationRecord> = loaded.into_records();
        let state = RunState::resume(header.config, header.mode, &records)?;
        Ok(Self {
            state,
            journal: Some(journal),
            journaled_pending,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn result(&self) -> RunResult {
        RunResult::of(&self.state)
    }

    pub fn is_done(&self) -> bool {
        self.state.status.is_terminal()
    }

    /// Executes (or finishes) one round. Returns `false` once the run is over.
    pub fn step(
        &mut self,
        oracle: &dyn Oracle,
        observer: &mut dyn RunObserver,
    ) -> Result<bool, EngineError> {
        if self.is_done() {
            return Ok(false);
        }
        if self.state.remaining() == 0 {
            self.state.status = RunStatus::Finished;
            observer.on_event(&RunEvent::Status(self.state.status), &self.state);
            return Ok(false);
        }
        let proposals = if self.state.outstanding.is_empty() {
            self.state.round_proposals()?
        } else {
            std::mem::take(&mut self.state.outstanding)
        };
        self.state.outstanding = proposals.clone();
        let seed = self.state.config.seed;
        let manual = oracle.provenance() == Provenance::Manual;

        if manual {
            for p in &proposals {
                let id = p.pending_id();
                if self.journaled_pending.contains(&id) {
                    continue;
                }
                if let Some(j) = self.journal.as_mut() {
                    j.append_pending(&PendingNotice {
                        pending_id: id.clone(),
                        round: p.round,
                        position: p.position + 1,
                        slot: p.slot,
                        configuration: p.configuration.clone(),
                        issued_at: crate::oracle::now_timestamp(),
                    })?;
                }
                self.journaled_pending.insert(id);
            }
            self.state.status = RunStatus::AwaitingMeasurement;
            observer.on_event(&RunEvent::Status(self.state.status), &self.state);
        }
        observer.on_event(&RunEvent::Pending(&proposals), &self.state);

        let requests: Vec<_> = proposals.iter().map(|p| p.request(seed)).collect();
        let stream = oracle.evaluate_batch(&requests).map_err(|e| self.cancel_on_close(e, observer))?;
        for item in stream {
            let evaluated = item.map_err(|e| self.cancel_on_close(e, observer))?;
            let proposal = &proposals[evaluated.index];
            let m = evaluated.measurement;
            let record = EvaluationRecord {
                record_id: self.state.calls() + 1,
                round: proposal.round,
                position: proposal.position + 1,
                slot: proposal.slot,
                source: proposal.source,
                configuration: proposal.configuration.clone(),
                readings: m.readings,
                fitness: m.fitness,
                provenance: m.provenance,
                pending_id: manual.then(|| proposal.pending_id()),
                idempotency_key: evaluated.idempotency_key,
                timestamp: m.timestamp,
            };
            if let Some(j) = self.journal.as_mut() {
                j.append(&record)?;
            }
            let record_id = record.record_id;
            self.state
                .outstanding
                .retain(|p| !(p.position == proposal.position && p.slot == proposal.slot));
            self.state.apply(record);
            let last = self.state.records.last().expect("just applied");
            observer.on_event(&RunEvent::Record(last), &self.state);
            // acknowledged only once observers (and thus service snapshots) have the record
            oracle.committed(&requests[evaluated.index].pending_id, record_id);
        }

        let round = self.state.round;
        self.state.complete_round();
        observer.on_event(&RunEvent::RoundComplete { round }, &self.state);
        if self.state.status == RunStatus::Finished || manual {
            observer.on_event(&RunEvent::Status(self.state.status), &self.state);
        }
        Ok(!self.is_done())
    }

    fn cancel_on_close(&mut self, e: OracleError, observer: &mut dyn RunObserver) -> EngineError {
        if matches!(e, OracleError::Queue(QueueError::Closed)) {
            self.state.status = RunStatus::Cancelled;
            observer.on_event(&RunEvent::Status(self.state.status), &self.state);
            EngineError::Cancelled
        } else {
            e.into()
        }
    }

    /// Runs rounds until the budget is spent.
    pub fn run_to_end(
        &mut self,
        oracle: &dyn Oracle,
        observer: &mut dyn RunObserver,
    ) -> Result<RunResult, EngineError> {
        while self.step(oracle, observer)? {}
        Ok(self.result())
    }
}

/// Surrogate-assisted run, records kept in memory.
pub fn run(config: RunConfig, oracle: &dyn Oracle) -> Result<RunResult, EngineError> {
    Run::in_memory(config, RunMode::Surrogate)?.run_to_end(oracle, &mut NoObserver)
}

/// The same coevolutionary loop with every offspring evaluated directly.
pub fn baseline_run(config: RunConfig, oracle: &dyn Oracle) -> Result<RunResult, EngineError> {
    Run::in_memory(config, RunMode::Baseline)?.run_to_end(oracle, &mut NoObserver)
}

/// Runs to completion while journaling to `path`.
pub fn run_journaled(
    config: RunConfig,
    mode: RunMode,
    oracle: &dyn Oracle,
    path: &Path,
) -> Result<RunResult, EngineError> {
    Run::create(config, mode, path, None)?.run_to_end(oracle, &mut NoObserver)
}
