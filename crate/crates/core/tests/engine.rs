use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use aeromine_core::journal::{self, canonical_lines};
use aeromine_core::oracle::{EvalRequest, EvaluationStream};
use aeromine_core::*;

fn synthetic(cfg: &RunConfig) -> SyntheticOracle {
    SyntheticOracle::new(&cfg.space, cfg.constants.clone()).unwrap()
}

fn small(seed: u64) -> RunConfig {
    RunConfig {
        positions: 2,
        seed,
        budget: 30,
        seeds_per_position: 4,
        proposals_per_iteration: 2,
        ..Default::default()
    }
}

fn finished(cfg: &RunConfig, mode: RunMode) -> Run {
    let mut run = Run::in_memory(cfg.clone(), mode).unwrap();
    run.run_to_end(&synthetic(cfg), &mut NoObserver).unwrap();
    run
}

/// Synthetic oracle that counts the configurations it is asked to evaluate.
struct Counting {
    inner: SyntheticOracle,
    calls: AtomicU64,
}

impl Oracle for Counting {
    fn provenance(&self) -> Provenance {
        self.inner.provenance()
    }

    fn evaluate_batch<'a>(
        &'a self,
        requests: &'a [EvalRequest],
    ) -> Result<EvaluationStream<'a>, OracleError> {
        self.calls.fetch_add(requests.len() as u64, Ordering::SeqCst);
        self.inner.evaluate_batch(requests)
    }
}

fn design(blades: f64, chord: f64, shape: f64, rotation: &str) -> BTreeMap<String, ParamValue> {
    BTreeMap::from([
        ("blades".to_string(), ParamValue::Number(blades)),
        ("chord".to_string(), ParamValue::Number(chord)),
        ("shape".to_string(), ParamValue::Number(shape)),
        ("rotation".to_string(), ParamValue::Level(rotation.into())),
    ])
}

#[test]
fn three_human_seeds_are_topped_up_with_seven_random() {
    let cfg = RunConfig {
        positions: 1,
        budget: 10,
        seed_designs: vec![
            SeedDesign { position: None, values: design(3.0, 0.2, 0.5, "CW") },
            SeedDesign { position: None, values: design(4.0, 0.3, 0.6, "CCW") },
            SeedDesign { position: Some(1), values: design(5.0, 0.1, 0.4, "CW") },
        ],
        ..Default::default()
    };
    let run = finished(&cfg, RunMode::Surrogate);
    let records = &run.state().records;
    assert_eq!(records.len(), 10);
    let sources: Vec<ProposalSource> = records.iter().map(|r| r.source).collect();
    assert_eq!(&sources[..3], &[ProposalSource::SeedHuman; 3]);
    assert!(sources[3..].iter().all(|s| *s == ProposalSource::SeedRandom));
    // the position-specific seed comes first
    let blades = cfg.space.index_of("blades").unwrap();
    assert_eq!(records[0].configuration.genomes[0].values[blades], ParamValue::Number(5.0));
    assert_eq!(records[1].configuration.genomes[0].values[blades], ParamValue::Number(3.0));
}

#[test]
fn budget_equal_to_seeding_finishes_without_mining() {
    let cfg = RunConfig {
        positions: 3,
        budget: 3 * 5,
        seeds_per_position: 5,
        ..Default::default()
    };
    let result = finished(&cfg, RunMode::Surrogate).result();
    assert_eq!(result.status, RunStatus::Finished);
    assert_eq!(result.calls, 15);
    assert_eq!(result.rounds, 0);
}

#[test]
fn budget_below_seeding_is_rejected() {
    let cfg = RunConfig {
        budget: 19,
        ..Default::default()
    };
    assert!(matches!(Run::in_memory(cfg, RunMode::Surrogate), Err(EngineError::Config(_))));
}

#[test]
fn budget_is_spent_exactly_with_a_partial_last_round() {
    let cfg = RunConfig {
        positions: 3,
        budget: 3 * 4 + 9 + 3,
        seeds_per_position: 4,
        proposals_per_iteration: 3,
        ..Default::default()
    };
    let run = finished(&cfg, RunMode::Surrogate);
    assert_eq!(run.state().calls(), 24);
    // round 1 takes all nine, round 2 only the first position's three
    let last: Vec<usize> = run.state().records[12 + 9..].iter().map(|r| r.position).collect();
    assert_eq!(last, vec![1, 1, 1]);
    assert_eq!(run.state().status, RunStatus::Finished);
}

#[test]
fn each_mining_round_costs_exactly_k_calls_per_position() {
    let cfg = small(3);
    let oracle = Counting {
        inner: synthetic(&cfg),
        calls: AtomicU64::new(0),
    };
    let mut run = Run::in_memory(cfg.clone(), RunMode::Surrogate).unwrap();
    run.step(&oracle, &mut NoObserver).unwrap();
    assert_eq!(oracle.calls.load(Ordering::SeqCst), 8);
    let mut before = 8;
    while run.step(&oracle, &mut NoObserver).unwrap() {
        let now = oracle.calls.load(Ordering::SeqCst);
        assert_eq!(now - before, 4);
        assert_eq!(now, run.state().calls());
        before = now;
    }
    assert_eq!(oracle.calls.load(Ordering::SeqCst), 30);
}

#[test]
fn best_trace_is_monotone_and_ends_at_the_best_record() {
    let cfg = small(11);
    let result = finished(&cfg, RunMode::Surrogate).result();
    assert!(result.best_trace.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(result.best_trace.last().copied(), result.best_fitness);
    let best = result.best_configuration.unwrap();
    assert_eq!(synthetic(&cfg).fitness(&best), result.best_fitness.unwrap());
}

#[test]
fn elites_are_the_best_of_their_archives() {
    let run = finished(&small(5), RunMode::Surrogate);
    let state = run.state();
    for p in 0..2 {
        let top = state.archive(p).map(|r| r.fitness).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(state.elite_record(p).unwrap().fitness, top);
        assert!(state.archive(p).all(|r| r.position == p + 1));
    }
}

#[test]
fn positions_commute_within_a_round() {
    let cfg = RunConfig {
        positions: 3,
        budget: 60,
        seeds_per_position: 4,
        proposals_per_iteration: 2,
        ..Default::default()
    };
    let oracle = synthetic(&cfg);
    let mut run = Run::in_memory(cfg, RunMode::Surrogate).unwrap();
    for _ in 0..3 {
        run.step(&oracle, &mut NoObserver).unwrap();
    }
    let state = run.state();
    let forward: Vec<Proposal> = (0..3).flat_map(|p| state.position_proposals(p).unwrap()).collect();
    let mut permuted: Vec<Proposal> = [2, 0, 1]
        .into_iter()
        .flat_map(|p| state.position_proposals(p).unwrap())
        .collect();
    permuted.sort_by_key(|p| (p.position, p.slot));
    assert_eq!(forward, permuted);
    assert_eq!(state.round_proposals().unwrap(), forward);
}

#[test]
fn identical_inputs_give_identical_runs() {
    let cfg = small(21);
    let a = finished(&cfg, RunMode::Surrogate);
    let b = finished(&cfg, RunMode::Surrogate);
    let strip = |run: &Run| -> Vec<(u64, f64, ArrayConfiguration)> {
        run.state()
            .records
            .iter()
            .map(|r| (r.record_id, r.fitness, r.configuration.clone()))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    let c = finished(&small(22), RunMode::Surrogate);
    assert_ne!(strip(&a), strip(&c));
}

#[test]
fn baseline_spends_population_minus_one_per_position_per_round() {
    let mut cfg = small(2);
    cfg.budget = 8 + 2 * 19 + 5;
    let run = finished(&cfg, RunMode::Baseline);
    let state = run.state();
    let round1 = state.records.iter().filter(|r| r.round == 1).count();
    let round2 = state.records.iter().filter(|r| r.round == 2).count();
    assert_eq!((round1, round2), (38, 5));
    assert!(state.records[8..].iter().all(|r| r.source == ProposalSource::Baseline));
}

#[test]
fn resume_from_every_record_prefix_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(9);
    cfg.constants.noise_eta = 0.02;
    let oracle = synthetic(&cfg);
    let full = dir.path().join("full.jsonl");
    run_journaled(cfg.clone(), RunMode::Surrogate, &oracle, &full).unwrap();
    let reference = canonical_lines(&full).unwrap();
    let text = std::fs::read_to_string(&full).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for keep in 0..lines.len() {
        let path = dir.path().join(format!("prefix{keep}.jsonl"));
        let mut prefix = lines[..=keep].join("\n");
        prefix.push('\n');
        std::fs::write(&path, prefix).unwrap();
        Run::resume(&path)
            .unwrap()
            .run_to_end(&oracle, &mut NoObserver)
            .unwrap();
        assert_eq!(canonical_lines(&path).unwrap(), reference, "prefix of {keep} records");
    }
}

#[test]
fn resume_rejects_a_journal_from_another_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(1);
    let oracle = synthetic(&cfg);
    let a = dir.path().join("a.jsonl");
    run_journaled(cfg.clone(), RunMode::Surrogate, &oracle, &a).unwrap();
    let loaded = journal::load(&a).unwrap();
    let mut other = cfg.clone();
    other.seed = 2;
    let err = RunState::resume(other, RunMode::Surrogate, &loaded.into_records()).unwrap_err();
    assert!(matches!(err, EngineError::Mismatch { record_id: 1, .. }), "{err}");
}

#[test]
fn journaled_runs_write_one_record_per_call() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(4);
    let path = dir.path().join("run.jsonl");
    let result = run_journaled(cfg.clone(), RunMode::Surrogate, &synthetic(&cfg), &path).unwrap();
    let loaded = journal::load(&path).unwrap();
    assert_eq!(loaded.records().count() as u64, result.calls);
    assert_eq!(loaded.header.config, cfg);
    let ids: Vec<u64> = loaded.records().map(|r| r.record_id).collect();
    assert_eq!(ids, (1..=30).collect::<Vec<_>>());
}

#[test]
fn observer_sees_every_record_and_the_final_status() {
    let cfg = small(6);
    let mut records = 0;
    let mut rounds = 0;
    let mut last_status = None;
    let mut observer = |event: &RunEvent<'_>, _: &RunState| match event {
        RunEvent::Record(_) => records += 1,
        RunEvent::RoundComplete { .. } => rounds += 1,
        RunEvent::Status(s) => last_status = Some(*s),
        RunEvent::Pending(_) => {}
    };
    Run::in_memory(cfg.clone(), RunMode::Surrogate)
        .unwrap()
        .run_to_end(&synthetic(&cfg), &mut observer)
        .unwrap();
    assert_eq!(records, 30);
    assert_eq!(rounds, 1 + 22 / 4 + 1);
    assert_eq!(last_status, Some(RunStatus::Finished));
}

/// Answers every pending evaluation with the noise-free synthetic readings,
/// in issue order, until the queue is closed.
fn operator(queue: Arc<ManualQueue>, oracle: SyntheticOracle) -> thread::JoinHandle<usize> {
    thread::spawn(move || {
        let mut answered = 0;
        while !queue.is_closed() {
            let pending = queue.awaiting();
            if pending.is_empty() {
                thread::sleep(Duration::from_millis(1));
                continue;
            }
            for p in pending {
                let readings = oracle.readings(&p.configuration);
                queue
                    .submit(&p.pending_id, readings, Some(format!("key-{}", p.pending_id)))
                    .unwrap();
                answered += 1;
            }
        }
        answered
    })
}

#[test]
fn manual_runs_match_synthetic_runs_fed_the_same_readings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(13);
    let queue = Arc::new(ManualQueue::new());
    let handle = operator(queue.clone(), synthetic(&cfg));
    let path = dir.path().join("manual.jsonl");
    let manual = run_journaled(cfg.clone(), RunMode::Surrogate, &ManualOracle::new(queue.clone()), &path)
        .unwrap();
    queue.close();
    assert_eq!(handle.join().unwrap(), 30);

    let automatic = finished(&cfg, RunMode::Surrogate).result();
    assert_eq!(manual.best_fitness, automatic.best_fitness);
    assert_eq!(manual.calls, automatic.calls);

    let loaded = journal::load(&path).unwrap();
    assert_eq!(loaded.pending().count(), 30);
    for r in loaded.records() {
        assert_eq!(r.provenance, Provenance::Manual);
        let id = r.pending_id.clone().unwrap();
        assert_eq!(r.idempotency_key.as_deref(), Some(format!("key-{id}").as_str()));
    }
}

#[test]
fn closing_the_queue_cancels_a_manual_run() {
    let cfg = small(14);
    let queue = Arc::new(ManualQueue::new());
    let closer = {
        let queue = queue.clone();
        thread::spawn(move || {
            while queue.awaiting().is_empty() {
                thread::sleep(Duration::from_millis(1));
            }
            queue.close();
        })
    };
    let mut run = Run::in_memory(cfg, RunMode::Surrogate).unwrap();
    let err = run.run_to_end(&ManualOracle::new(queue), &mut NoObserver).unwrap_err();
    closer.join().unwrap();
    assert!(matches!(err, EngineError::Cancelled));
    assert_eq!(run.state().status, RunStatus::Cancelled);
}

#[test]
fn a_restarted_manual_run_reissues_the_same_pending_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(15);
    let path = dir.path().join("manual.jsonl");

    let queue = Arc::new(ManualQueue::new());
    let closer = {
        let queue = queue.clone();
        thread::spawn(move || {
            while queue.awaiting().len() < 8 {
                thread::sleep(Duration::from_millis(1));
            }
            let first = queue.awaiting()[0].clone();
            let readings = vec![vec![0.5, 0.25]];
            queue.submit(&first.pending_id, readings, None).unwrap();
            queue.wait_committed(&first.pending_id, Duration::from_secs(10)).unwrap();
            queue.close();
            queue.awaiting().into_iter().map(|p| p.pending_id).collect::<Vec<_>>()
        })
    };
    let mut run = Run::create(cfg.clone(), RunMode::Surrogate, &path, None).unwrap();
    assert!(run.run_to_end(&ManualOracle::new(queue), &mut NoObserver).is_err());
    let mut left = closer.join().unwrap();
    left.sort();

    let run = Run::resume(&path).unwrap();
    assert_eq!(run.state().calls(), 1);
    let mut outstanding: Vec<String> = run.state().outstanding.iter().map(|p| p.pending_id()).collect();
    outstanding.sort();
    assert_eq!(outstanding, left);
    assert_eq!(journal::load(&path).unwrap().pending().count(), 8);
}
