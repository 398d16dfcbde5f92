//! Human-in-the-loop evaluation queue.
//!
//! The engine proposes configurations for fabrication and blocks until an
//! operator submits the measured readings. All mutations go through one mutex;
//! waiters are woken through a condition variable.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    now_timestamp, ArrayConfiguration, EvalRequest, Evaluated, EvaluationStream, Measurement,
    Oracle, OracleError, Provenance, Readings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PendingStatus {
    Awaiting,
    Submitted,
    Cancelled,
}

/// A configuration handed to the operator for fabrication and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEvaluation {
    pub pending_id: String,
    pub configuration: ArrayConfiguration,
    pub issued_at: String,
    pub status: PendingStatus,
}

/// A problem with one cell (or row) of a submitted readings matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellIssue {
    pub row: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    pub problem: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("queue closed")]
    Closed,
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("`{0}` already submitted")]
    AlreadySubmitted(String),
    #[error("`{0}` was cancelled")]
    Cancelled(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("readings must be {rows} wind speeds x {columns} positions ({} problems)", .issues.len())]
    DimensionMismatch {
        rows: usize,
        columns: usize,
        issues: Vec<CellIssue>,
    },
}

/// Result of a submission. `replayed` is set when the idempotency key matched
/// an earlier submission and nothing changed.
#[derive(Debug, Clone)]
pub struct Submission {
    pub measurement: Measurement,
    pub replayed: bool,
}

#[derive(Debug)]
struct Entry {
    pending: PendingEvaluation,
    measurement: Option<Measurement>,
    idempotency_key: Option<String>,
    taken: bool,
    record_id: Option<u64>,
}

#[derive(Debug, Default)]
struct Inner {
    closed: bool,
    next_auto: u64,
    order: Vec<String>,
    entries: HashMap<String, Entry>,
}

#[derive(Debug, Default)]
pub struct ManualQueue {
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl ManualQueue {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Issues `config` under a fresh `p<n>` identifier.
    pub fn propose(&self, config: ArrayConfiguration) -> Result<String, QueueError> {
        let mut inner = self.lock();
        loop {
            inner.next_auto += 1;
            let id = format!("p{}", inner.next_auto);
            if !inner.entries.contains_key(&id) {
                drop(inner);
                return self.propose_with_id(id, config);
            }
        }
    }

    /// Issues `config` under a caller-chosen identifier.
    pub fn propose_with_id(
        &self,
        pending_id: String,
        config: ArrayConfiguration,
    ) -> Result<String, QueueError> {
        let mut inner = self.lock();
        if inner.closed {
            return Err(QueueError::Closed);
        }
        if inner.entries.contains_key(&pending_id) {
            return Err(QueueError::DuplicateId(pending_id));
        }
        inner.order.push(pending_id.clone());
        inner.entries.insert(
            pending_id.clone(),
            Entry {
                pending: PendingEvaluation {
                    pending_id: pending_id.clone(),
                    configuration: config,
                    issued_at: now_timestamp(),
                    status: PendingStatus::Awaiting,
                },
                measurement: None,
                idempotency_key: None,
                taken: false,
                record_id: None,
            },
        );
        drop(inner);
        self.changed.notify_all();
        Ok(pending_id)
    }

    /// Records the operator's readings for `pending_id`.
    pub fn submit(
        &self,
        pending_id: &str,
        readings: Readings,
        idempotency_key: Option<String>,
    ) -> Result<Submission, QueueError> {
        let mut inner = self.lock();
        let entry = inner
            .entries
            .get_mut(pending_id)
            .ok_or_else(|| QueueError::UnknownId(pending_id.to_string()))?;
        match entry.pending.status {
            PendingStatus::Cancelled => return Err(QueueError::Cancelled(pending_id.into())),
            PendingStatus::Submitted => {
                return match (&entry.idempotency_key, &idempotency_key, &entry.measurement) {
                    (Some(a), Some(b), Some(m)) if a == b => Ok(Submission {
                        measurement: m.clone(),
                        replayed: true,
                    }),
                    _ => Err(QueueError::AlreadySubmitted(pending_id.into())),
                };
            }
            PendingStatus::Awaiting => {}
        }
        check_dimensions(&entry.pending.configuration, &readings)?;
        let measurement = Measurement::new(readings, Provenance::Manual)
            .expect("dimensions checked above");
        entry.pending.status = PendingStatus::Submitted;
        entry.measurement = Some(measurement.clone());
        entry.idempotency_key = idempotency_key;
        drop(inner);
        self.changed.notify_all();
        Ok(Submission {
            measurement,
            replayed: false,
        })
    }

    pub fn cancel(&self, pending_id: &str) -> Result<(), QueueError> {
        let mut inner = self.lock();
        let entry = inner
            .entries
            .get_mut(pending_id)
            .ok_or_else(|| QueueError::UnknownId(pending_id.to_string()))?;
        match entry.pending.status {
            PendingStatus::Awaiting => entry.pending.status = PendingStatus::Cancelled,
            PendingStatus::Submitted => return Err(QueueError::AlreadySubmitted(pending_id.into())),
            PendingStatus::Cancelled => {}
        }
        drop(inner);
        self.changed.notify_all();
        Ok(())
    }

    /// Closes the queue: further proposals fail and waiters are released.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn get(&self, pending_id: &str) -> Option<PendingEvaluation> {
        self.lock().entries.get(pending_id).map(|e| e.pending.clone())
    }

    /// Awaiting entries in issue order.
    pub fn awaiting(&self) -> Vec<PendingEvaluation> {
        let inner = self.lock();
        inner
            .order
            .iter()
            .filter_map(|id| inner.entries.get(id))
            .filter(|e| e.pending.status == PendingStatus::Awaiting)
            .map(|e| e.pending.clone())
            .collect()
    }

    /// Blocks until one of `ids` has an unclaimed measurement, then claims it.
    pub fn wait_any(&self, ids: &[String]) -> Result<(usize, Measurement, Option<String>), QueueError> {
        let mut inner = self.lock();
        loop {
            for (i, id) in ids.iter().enumerate() {
                let entry = inner
                    .entries
                    .get_mut(id)
                    .ok_or_else(|| QueueError::UnknownId(id.clone()))?;
                if entry.pending.status == PendingStatus::Cancelled {
                    return Err(QueueError::Cancelled(id.clone()));
                }
                if !entry.taken {
                    if let Some(m) = &entry.measurement {
                        entry.taken = true;
                        return Ok((i, m.clone(), entry.idempotency_key.clone()));
                    }
                }
            }
            if inner.closed {
                return Err(QueueError::Closed);
            }
            inner = self.changed.wait(inner).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn mark_committed(&self, pending_id: &str, record_id: u64) {
        if let Some(e) = self.lock().entries.get_mut(pending_id) {
            e.record_id = Some(record_id);
        }
        self.changed.notify_all();
    }

    /// Waits until the submission for `pending_id` has been journaled.
    pub fn wait_committed(&self, pending_id: &str, timeout: Duration) -> Option<u64> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            let entry = inner.entries.get(pending_id)?;
            if let Some(id) = entry.record_id {
                return Some(id);
            }
            if inner.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            inner = self
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

fn check_dimensions(config: &ArrayConfiguration, readings: &Readings) -> Result<(), QueueError> {
    let rows = config.wind_speeds.len();
    let columns = config.genomes.len();
    let mut issues = Vec::new();
    if readings.len() != rows {
        issues.push(CellIssue {
            row: readings.len(),
            column: None,
            problem: format!("expected {rows} rows, got {}", readings.len()),
        });
    }
    for (row, cells) in readings.iter().enumerate() {
        if cells.len() != columns {
            issues.push(CellIssue {
                row,
                column: None,
                problem: format!("expected {columns} cells, got {}", cells.len()),
            });
        }
        for (column, v) in cells.iter().enumerate() {
            if !v.is_finite() {
                issues.push(CellIssue {
                    row,
                    column: Some(column),
                    problem: "not a finite number".into(),
                });
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(QueueError::DimensionMismatch {
            rows,
            columns,
            issues,
        })
    }
}

/// Oracle backed by a [`ManualQueue`]: every request becomes a pending
/// evaluation and results arrive in whatever order the operator submits them.
#[derive(Debug, Clone)]
pub struct ManualOracle {
    queue: std::sync::Arc<ManualQueue>,
}

impl ManualOracle {
    pub fn new(queue: std::sync::Arc<ManualQueue>) -> Self {
        Self { queue }
    }

    pub fn queue(&self) -> &std::sync::Arc<ManualQueue> {
        &self.queue
    }
}

impl Oracle for ManualOracle {
    fn provenance(&self) -> Provenance {
        Provenance::Manual
    }

    fn evaluate_batch<'a>(
        &'a self,
        requests: &'a [EvalRequest],
    ) -> Result<EvaluationStream<'a>, OracleError> {
        for r in requests {
            match self
                .queue
                .propose_with_id(r.pending_id.clone(), r.configuration.clone())
            {
                // already issued before a restart of the same process
                Ok(_) | Err(QueueError::DuplicateId(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let mut remaining: Vec<(usize, String)> = requests
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.pending_id.clone()))
            .collect();
        Ok(Box::new(std::iter::from_fn(move || {
            if remaining.is_empty() {
                return None;
            }
            let ids: Vec<String> = remaining.iter().map(|(_, id)| id.clone()).collect();
            Some(match self.queue.wait_any(&ids) {
                Ok((slot, measurement, idempotency_key)) => {
                    let (index, _) = remaining.remove(slot);
                    Ok(Evaluated {
                        index,
                        measurement,
                        idempotency_key,
                    })
                }
                Err(e) => {
                    remaining.clear();
                    Err(e.into())
                }
            })
        })))
    }

    fn committed(&self, pending_id: &str, record_id: u64) {
        self.queue.mark_committed(pending_id, record_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Genome, ParamValue};
    use std::sync::Arc;

    fn config(n: usize, speeds: usize) -> ArrayConfiguration {
        ArrayConfiguration {
            genomes: vec![
                Genome::new(vec![
                    ParamValue::Number(4.0),
                    ParamValue::Number(0.3),
                    ParamValue::Number(0.6),
                    ParamValue::Level("CW".into()),
                ]);
                n
            ],
            spacing: 0.75,
            wind_speeds: (1..=speeds).map(|v| v as f64).collect(),
        }
    }

    #[test]
    fn propose_issues_distinct_awaiting_ids() {
        let q = ManualQueue::new();
        let a = q.propose(config(2, 3)).unwrap();
        let b = q.propose(config(2, 3)).unwrap();
        assert_eq!(a, "p1");
        assert_ne!(a, b);
        assert_eq!(q.get(&a).unwrap().status, PendingStatus::Awaiting);
        assert_eq!(q.awaiting().len(), 2);
    }

    #[test]
    fn propose_after_close_fails() {
        let q = ManualQueue::new();
        q.close();
        assert_eq!(q.propose(config(1, 1)), Err(QueueError::Closed));
    }

    #[test]
    fn submit_computes_fitness() {
        let q = ManualQueue::new();
        // 3 speeds x 2 positions
        let id = q.propose(config(2, 3)).unwrap();
        let s = q
            .submit(&id, vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, -0.5]], None)
            .unwrap();
        // per-speed sums 3, 7, 4.5 -> mean 14.5 / 3
        assert!((s.measurement.fitness - 14.5 / 3.0).abs() < 1e-15);
        assert_eq!(s.measurement.provenance, Provenance::Manual);
        assert_eq!(q.get(&id).unwrap().status, PendingStatus::Submitted);
    }

    #[test]
    fn double_submit_and_unknown_id() {
        let q = ManualQueue::new();
        let id = q.propose(config(1, 1)).unwrap();
        q.submit(&id, vec![vec![1.0]], None).unwrap();
        assert_eq!(
            q.submit(&id, vec![vec![1.0]], None).unwrap_err(),
            QueueError::AlreadySubmitted(id.clone())
        );
        assert_eq!(
            q.submit("p9", vec![vec![1.0]], None).unwrap_err(),
            QueueError::UnknownId("p9".into())
        );
    }

    #[test]
    fn idempotent_resubmit_replays() {
        let q = ManualQueue::new();
        let id = q.propose(config(1, 1)).unwrap();
        let first = q.submit(&id, vec![vec![2.0]], Some("k1".into())).unwrap();
        let again = q.submit(&id, vec![vec![9.0]], Some("k1".into())).unwrap();
        assert!(again.replayed);
        assert_eq!(first.measurement, again.measurement);
        assert!(q.submit(&id, vec![vec![2.0]], Some("k2".into())).is_err());
    }

    #[test]
    fn dimension_mismatch_lists_cells() {
        let q = ManualQueue::new();
        let id = q.propose(config(2, 2)).unwrap();
        let err = q
            .submit(&id, vec![vec![1.0], vec![f64::NAN, 1.0]], None)
            .unwrap_err();
        match err {
            QueueError::DimensionMismatch { rows, columns, issues } => {
                assert_eq!((rows, columns), (2, 2));
                assert_eq!(issues.len(), 2);
                assert_eq!(issues[1].column, Some(0));
            }
            e => panic!("{e:?}"),
        }
        assert_eq!(q.get(&id).unwrap().status, PendingStatus::Awaiting);
    }

    #[test]
    fn oracle_yields_in_submission_order() {
        let queue = Arc::new(ManualQueue::new());
        let oracle = ManualOracle::new(queue.clone());
        let requests: Vec<EvalRequest> = ["a", "b"]
            .iter()
            .map(|id| EvalRequest {
                pending_id: id.to_string(),
                configuration: config(1, 1),
                noise_key: crate::rng::RandomKey::new(0, "noise"),
            })
            .collect();
        let submitter = {
            let queue = queue.clone();
            std::thread::spawn(move || {
                while queue.awaiting().len() < 2 {
                    std::thread::yield_now();
                }
                queue.submit("b", vec![vec![2.0]], None).unwrap();
                queue.submit("a", vec![vec![1.0]], None).unwrap();
            })
        };
        let got: Vec<usize> = oracle
            .evaluate_batch(&requests)
            .unwrap()
            .map(|r| r.unwrap().index)
            .collect();
        submitter.join().unwrap();
        assert_eq!(got.len(), 2);
        assert!(got.contains(&0) && got.contains(&1));
    }

    #[test]
    fn closing_releases_waiters() {
        let queue = Arc::new(ManualQueue::new());
        let id = queue.propose(config(1, 1)).unwrap();
        let q2 = queue.clone();
        let h = std::thread::spawn(move || q2.wait_any(&[id]));
        std::thread::sleep(Duration::from_millis(20));
        queue.close();
        assert_eq!(h.join().unwrap().unwrap_err(), QueueError::Closed);
    }
}
