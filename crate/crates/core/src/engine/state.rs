use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::journal::{EvaluationRecord, ProposalSource};
use crate::optimizer::{self, Candidate, SelectionKey};
use crate::oracle::{ArrayConfiguration, EvalRequest};
use crate::rng::RandomKey;
use crate::space::Genome;
use crate::surrogate::{self, Dataset, SurrogateModel};

use super::codec::Codec;
use super::config::{RunConfig, RunMode};
use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingMeasurement,
    Finished,
    Cancelled,
}

impl RunStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Cancelled)
    }
}

/// A configuration the engine wants evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub round: u64,
    /// 0-based position whose archive receives the result.
    pub position: usize,
    pub slot: usize,
    pub source: ProposalSource,
    pub configuration: ArrayConfiguration,
    /// The proposing position's search vector.
    pub vector: Vec<f64>,
}

impl Proposal {
    pub fn pending_id(&self) -> String {
        format!("r{}-p{}-s{}", self.round, self.position + 1, self.slot)
    }

    pub fn noise_key(&self, seed: u64) -> RandomKey {
        RandomKey::new(seed, "noise")
            .position(self.position)
            .iteration(self.round)
            .counter(self.slot as u64)
    }

    pub fn request(&self, seed: u64) -> EvalRequest {
        EvalRequest {
            pending_id: self.pending_id(),
            configuration: self.configuration.clone(),
            noise_key: self.noise_key(seed),
        }
    }
}

/// Everything the engine knows about a run. A pure function of the config
/// and the journal records, so it is never persisted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub config: RunConfig,
    pub mode: RunMode,
    /// All records, in record-id order.
    pub records: Vec<EvaluationRecord>,
    /// Per position, indices into `records`.
    pub archives: Vec<Vec<usize>>,
    /// Per position, index of the best record of its archive.
    pub elites: Vec<Option<usize>>,
    pub best: Option<usize>,
    /// Round in progress, or the next round to start. Round 0 is seeding.
    pub round: u64,
    pub status: RunStatus,
    /// Proposals of the current round still waiting for a measurement.
    pub outstanding: Vec<Proposal>,
    codec: Codec,
}

impl RunState {
    pub fn new(config: RunConfig, mode: RunMode) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        let n = config.positions;
        let codec = Codec::new(&config);
        let mut state = Self {
            config,
            mode,
            records: Vec::new(),
            archives: vec![Vec::new(); n],
            elites: vec![None; n],
            best: None,
            round: 0,
            status: RunStatus::Running,
            outstanding: Vec::new(),
            codec,
        };
        if state.config.budget == 0 {
            state.status = RunStatus::Finished;
        }
        Ok(state)
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn calls(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn remaining(&self) -> u64 {
        self.config.budget.saturating_sub(self.calls())
    }

    pub fn best_record(&self) -> Option<&EvaluationRecord> {
        self.best.map(|i| &self.records[i])
    }

    pub fn elite_record(&self, p: usize) -> Option<&EvaluationRecord> {
        self.elites[p].map(|i| &self.records[i])
    }

    pub fn archive(&self, p: usize) -> impl Iterator<Item = &EvaluationRecord> {
        self.archives[p].iter().map(|&i| &self.records[i])
    }

    /// Number of evaluations the given round consists of.
    pub fn round_size(&self, round: u64) -> u64 {
        let n = self.config.positions as u64;
        if round == 0 {
            return self.config.seeding_size();
        }
        let per_position = match self.mode {
            RunMode::Surrogate => self.config.proposals_per_iteration,
            RunMode::Baseline => self.config.ea.population_size.saturating_sub(1).max(1),
        } as u64;
        (n * per_position).min(self.remaining())
    }

    /// Adds a measured record and updates elites and the global best.
    pub fn apply(&mut self, record: EvaluationRecord) {
        let p = record.position - 1;
        let idx = self.records.len();
        let fitness = record.fitness;
        self.records.push(record);
        self.archives[p].push(idx);
        if self.elites[p].is_none_or(|e| fitness > self.records[e].fitness) {
            self.elites[p] = Some(idx);
        }
        if self.best.is_none_or(|b| fitness > self.records[b].fitness) {
            self.best = Some(idx);
        }
    }

    /// Closes the current round and decides whether the run goes on.
    pub fn complete_round(&mut self) {
        self.outstanding.clear();
        self.round += 1;
        if self.remaining() == 0 {
            self.status = RunStatus::Finished;
        } else if self.status == RunStatus::AwaitingMeasurement {
            self.status = RunStatus::Running;
        }
    }

    /// Proposals for the current round, computed from the state as it is at
    /// round start. Positions are independent and computed concurrently.
    pub fn round_proposals(&self) -> Result<Vec<Proposal>, EngineError> {
        if self.round == 0 {
            return self.seed_proposals();
        }
        let per_position: Vec<Vec<Proposal>> = (0..self.config.positions)
            .into_par_iter()
            .map(|p| self.position_proposals(p))
            .collect::<Result<_, _>>()?;
        let budget = self.remaining() as usize;
        Ok(per_position.into_iter().flatten().take(budget).collect())
    }

    /// Untruncated mining proposals of one position for the current round.
    /// Depends only on the round-start state, so positions commute.
    pub fn position_proposals(&self, p: usize) -> Result<Vec<Proposal>, EngineError> {
        if self.round == 0 {
            return Ok(self
                .seed_proposals()?
                .into_iter()
                .filter(|pr| pr.position == p)
                .collect());
        }
        match self.mode {
            RunMode::Surrogate => self.mining_proposals(p),
            RunMode::Baseline => self.baseline_proposals(p),
        }
    }

    fn seed_proposals(&self) -> Result<Vec<Proposal>, EngineError> {
        let cfg = &self.config;
        let space = &cfg.space;
        let mut out = Vec::with_capacity(cfg.seeding_size() as usize);
        for p in 0..cfg.positions {
            let human: Vec<Genome> = cfg
                .seed_designs
                .iter()
                .filter(|s| s.position == Some(p + 1))
                .chain(cfg.seed_designs.iter().filter(|s| s.position.is_none()))
                .map(|s| space.genome_from_map(&s.values))
                .collect::<Result<_, _>>()?;
            for slot in 0..cfg.seeds_per_position {
                let (mut genome, source) = match human.get(slot) {
                    Some(g) => (g.clone(), ProposalSource::SeedHuman),
                    None => {
                        let key = RandomKey::new(cfg.seed, "seed-genome")
                            .position(p)
                            .counter(slot as u64);
                        (space.random_genome(key)?, ProposalSource::SeedRandom)
                    }
                };
                self.codec.pin(p, &mut genome);
                let mut rng = RandomKey::new(cfg.seed, "seed-peers")
                    .position(p)
                    .counter(slot as u64)
                    .rng();
                let mut genomes = Vec::with_capacity(cfg.positions);
                for q in 0..cfg.positions {
                    if q == p {
                        genomes.push(genome.clone());
                    } else {
                        let mut peer = space.sample_genome(&mut rng);
                        self.codec.pin(q, &mut peer);
                        genomes.push(peer);
                    }
                }
                let u: f64 = rand::Rng::random(&mut rng);
                let configuration = self.codec.assemble(genomes, self.codec.random_spacing(u));
                let vector = self.codec.search_vector(p, &configuration)?;
                out.push(Proposal {
                    round: 0,
                    position: p,
                    slot,
                    source,
                    configuration,
                    vector,
                });
            }
        }
        Ok(out)
    }

    /// Genomes of every position's elite, the collaboration context.
    fn elite_context(&self) -> Result<Vec<Genome>, EngineError> {
        (0..self.config.positions)
            .map(|q| {
                self.elite_record(q)
                    .map(|r| r.configuration.genomes[q].clone())
                    .ok_or(EngineError::MissingElite(q + 1))
            })
            .collect()
    }

    /// Archive of `p` as (search vector, fitness), best first, ties by age.
    fn ranked_archive(&self, p: usize) -> Result<Vec<(Vec<f64>, f64)>, EngineError> {
        let mut rows: Vec<(Vec<f64>, f64)> = self
            .archive(p)
            .map(|r| Ok((self.codec.search_vector(p, &r.configuration)?, r.fitness)))
            .collect::<Result<_, EngineError>>()?;
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(rows)
    }

    /// Training data for position `p`: whole-array inputs, measured fitness.
    pub fn dataset(&self, p: usize) -> Result<Dataset, EngineError> {
        let mut data = Dataset::new();
        for r in self.archive(p) {
            data.push(self.codec.input(&r.configuration)?, r.fitness);
        }
        Ok(data)
    }

    pub fn surrogate_key(&self, p: usize, round: u64) -> RandomKey {
        RandomKey::new(self.config.seed, "surrogate")
            .position(p)
            .iteration(round)
    }

    /// The surrogate position `p` uses in the current round.
    pub fn fit_surrogate(&self, p: usize) -> Result<(SurrogateModel, Vec<f64>), EngineError> {
        let data = self.dataset(p)?;
        Ok(surrogate::fit_with_curve(
            &data,
            &self.config.fit,
            self.surrogate_key(p, self.round),
        )?)
    }

    fn mining_proposals(&self, p: usize) -> Result<Vec<Proposal>, EngineError> {
        let cfg = &self.config;
        let codec = &self.codec;
        let round = self.round;
        let context = self.elite_context()?;
        let context_vectors: Vec<Vec<f64>> = context
            .iter()
            .map(|g| cfg.space.normalize(g).map(|u| u.0))
            .collect::<Result<_, _>>()?;

        let model = surrogate::fit(&self.dataset(p)?, &cfg.fit, self.surrogate_key(p, round))?;
        let archive = self.ranked_archive(p)?;
        let current: Vec<Vec<f64>> = archive.iter().map(|(v, _)| v.clone()).collect();
        let compose_input = |v: &[f64]| -> Vec<f64> {
            let snapped = codec.snap(p, v).unwrap_or_else(|_| v.to_vec());
            codec.input_in_context(p, &snapped, &context_vectors)
        };
        let stream = RandomKey::new(cfg.seed, "evolve").position(p).iteration(round);
        let ranked = optimizer::evolve_on_model(
            &model,
            &compose_input,
            &current,
            &cfg.ea,
            codec.kinds(),
            stream,
        )?;

        let k = cfg.proposals_per_iteration;
        let mut seen = current;
        let mut chosen: Vec<(Vec<f64>, ProposalSource)> = Vec::with_capacity(k);
        for c in &ranked {
            if chosen.len() == k {
                break;
            }
            let v = codec.snap(p, &c.vector)?;
            if optimizer::novelty_filter(&v, &seen, cfg.ea.novelty_eps) {
                seen.push(v.clone());
                chosen.push((v, ProposalSource::Surrogate));
            }
        }
        let top = codec.snap(p, &ranked[0].vector)?;
        while chosen.len() < k {
            let slot = chosen.len() as u64;
            let mut rng = RandomKey::new(cfg.seed, "fallback")
                .position(p)
                .iteration(round)
                .counter(slot)
                .rng();
            let mutated = optimizer::mutate(&top, &cfg.ea, codec.kinds(), &mut rng);
            chosen.push((codec.snap(p, &mutated)?, ProposalSource::FallbackMutation));
        }

        chosen
            .into_iter()
            .enumerate()
            .map(|(slot, (vector, source))| {
                Ok(Proposal {
                    round,
                    position: p,
                    slot,
                    source,
                    configuration: codec.compose(p, &vector, &context)?,
                    vector,
                })
            })
            .collect()
    }

    /// Direct-evaluation variant: one generation of the same EA whose
    /// population is the position's elite plus its previous offspring.
    fn baseline_proposals(&self, p: usize) -> Result<Vec<Proposal>, EngineError> {
        let cfg = &self.config;
        let codec = &self.codec;
        let round = self.round;
        let context = self.elite_context()?;
        let elite = self.elites[p].ok_or(EngineError::MissingElite(p + 1))?;
        let previous = round - 1;
        let mut members = vec![elite];
        members.extend(
            self.archives[p]
                .iter()
                .copied()
                .filter(|&i| i != elite && self.records[i].round == previous),
        );
        let pop: Vec<Candidate> = members
            .iter()
            .map(|&i| {
                let r = &self.records[i];
                Ok(Candidate {
                    vector: codec.search_vector(p, &r.configuration)?,
                    predicted: None,
                    measured: Some(r.fitness),
                })
            })
            .collect::<Result<_, EngineError>>()?;
        let count = cfg.ea.population_size.saturating_sub(1).max(1);
        let mut rng = RandomKey::new(cfg.seed, "baseline")
            .position(p)
            .iteration(round)
            .rng();
        let (_, children) = optimizer::next_generation(
            &pop,
            count,
            SelectionKey::Measured,
            &cfg.ea,
            codec.kinds(),
            &mut rng,
        )?;
        children
            .into_iter()
            .enumerate()
            .map(|(slot, child)| {
                let vector = codec.snap(p, &child)?;
                Ok(Proposal {
                    round,
                    position: p,
                    slot,
                    source: ProposalSource::Baseline,
                    configuration: codec.compose(p, &vector, &context)?,
                    vector,
                })
            })
            .collect()
    }

    /// Rebuilds the state of a run from its journal records.
    ///
    /// Every record is checked against the proposal the engine would have
    /// made at that point. A trailing incomplete round leaves its unanswered
    /// proposals in `outstanding`.
    pub fn resume(
        config: RunConfig,
        mode: RunMode,
        records: &[EvaluationRecord],
    ) -> Result<Self, EngineError> {
        let mut state = Self::new(config, mode)?;
        let mut rest = records;
        while !rest.is_empty() {
            if state.status.is_terminal() {
                return Err(EngineError::Mismatch {
                    record_id: rest[0].record_id,
                    reason: "record after the run finished".into(),
                });
            }
            let round = state.round;
            let take = rest.iter().take_while(|r| r.round == round).count();
            if take == 0 {
                return Err(EngineError::Mismatch {
                    record_id: rest[0].record_id,
                    reason: format!("expected round {round}, found round {}", rest[0].round),
                });
            }
            let (group, tail) = rest.split_at(take);
            rest = tail;
            let mut proposals = state.round_proposals()?;
            for r in group {
                if r.record_id != state.calls() + 1 {
                    return Err(EngineError::Mismatch {
                        record_id: r.record_id,
                        reason: "record ids out of sequence".into(),
                    });
                }
                let at = proposals
                    .iter()
                    .position(|pr| pr.position + 1 == r.position && pr.slot == r.slot)
                    .ok_or_else(|| EngineError::Mismatch {
                        record_id: r.record_id,
                        reason: format!("no proposal for position {} slot {}", r.position, r.slot),
                    })?;
                let proposal = proposals.remove(at);
                if proposal.configuration != r.configuration || proposal.source != r.source {
                    return Err(EngineError::Mismatch {
                        record_id: r.record_id,
                        reason: "configuration differs from the engine's proposal".into(),
                    });
                }
                state.apply(r.clone());
            }
            if proposals.is_empty() {
                state.complete_round();
            } else {
                if !rest.is_empty() {
                    return Err(EngineError::Mismatch {
                        record_id: rest[0].record_id,
                        reason: format!("round {round} is incomplete"),
                    });
                }
                state.outstanding = proposals;
            }
        }
        Ok(state)
    }
}
