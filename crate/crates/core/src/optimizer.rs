//! Real-coded generational evolutionary algorithm on `[0, 1]^d`.
//!
//! The same generation step drives model inversion (key = surrogate
//! prediction) and direct optimization (key = measured fitness).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomKey;
use crate::space::CoordKind;
use crate::surrogate::{Predictor, SurrogateError};

/// Share of the initial model-inversion population drawn at random.
pub const IMMIGRANT_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("empty population")]
    EmptyPopulation,
    #[error("candidate {0} has no key value")]
    MissingKey(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EAParams {
    pub population_size: usize,
    pub tournament_k: usize,
    pub crossover_prob: f64,
    /// Standard deviation of Gaussian mutation, in normalized units.
    pub mutation_sigma: f64,
    /// Per-coordinate mutation probability; `1/dimension` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    pub generations_on_model: usize,
    /// Minimum normalized distance to every archived design of the position.
    pub novelty_eps: f64,
}

impl Default for EAParams {
    fn default() -> Self {
        Self {
            population_size: 20,
            tournament_k: 3,
            crossover_prob: 0.8,
            mutation_sigma: 0.1,
            mutation_prob: None,
            generations_on_model: 50,
            novelty_eps: 1e-3,
        }
    }
}

impl EAParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.population_size < 2 {
            out.push("population_size must be >= 2".to_string());
        }
        if self.tournament_k == 0 || self.tournament_k > self.population_size {
            out.push("tournament_k must be in [1, population_size]".to_string());
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            out.push("crossover_prob must be in [0, 1]".to_string());
        }
        if let Some(p) = self.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                out.push("mutation_prob must be in [0, 1]".to_string());
            }
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma > 0.0) {
            out.push("mutation_sigma must be positive".to_string());
        }
        if !(self.novelty_eps.is_finite() && self.novelty_eps >= 0.0) {
            out.push("novelty_eps must be >= 0".to_string());
        }
        out
    }

    fn mutation_rate(&self, dim: usize) -> f64 {
        self.mutation_prob.unwrap_or(1.0 / dim.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub vector: Vec<f64>,
    pub predicted: Option<f64>,
    pub measured: Option<f64>,
}

impl Candidate {
    pub fn new(vector: Vec<f64>) -> Self {
        Self {
            vector,
            predicted: None,
            measured: None,
        }
    }
}

/// Which candidate value selection ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionKey {
    Predicted,
    Measured,
}

impl SelectionKey {
    pub fn of(self, c: &Candidate) -> Option<f64> {
        match self {
            SelectionKey::Predicted => c.predicted,
            SelectionKey::Measured => c.measured,
        }
    }

    fn set(self, c: &mut Candidate, v: f64) {
        match self {
            SelectionKey::Predicted => c.predicted = Some(v),
            SelectionKey::Measured => c.measured = Some(v),
        }
    }
}

fn level_coord(index: usize, levels: usize) -> f64 {
    index as f64 / (levels - 1).max(1) as f64
}

/// Uniform random point, with categorical coordinates on their level grid.
pub fn random_vector<R: Rng + ?Sized>(kinds: &[CoordKind], rng: &mut R) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match *k {
            CoordKind::Numeric => rng.random::<f64>(),
            CoordKind::Categorical { levels } => level_coord(rng.random_range(0..levels), levels),
        })
        .collect()
}

/// Gaussian perturbation clamped to `[0, 1]`; categorical coordinates are
/// resampled uniformly instead.
pub fn mutate<R: Rng + ?Sized>(
    v: &[f64],
    params: &EAParams,
    kinds: &[CoordKind],
    rng: &mut R,
) -> Vec<f64> {
    let rate = params.mutation_rate(v.len());
    let normal = Normal::new(0.0, params.mutation_sigma).expect("mutation_sigma validated");
    v.iter()
        .zip(kinds)
        .map(|(&x, kind)| {
            if rng.random::<f64>() >= rate {
                return x;
            }
            match *kind {
                CoordKind::Numeric => (x + normal.sample(rng)).clamp(0.0, 1.0),
                CoordKind::Categorical { levels } => {
                    level_coord(rng.random_range(0..levels), levels)
                }
            }
        })
        .collect()
}

/// Uniform crossover with probability `crossover_prob`, otherwise a copy of `a`.
pub fn crossover<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    params: &EAParams,
    rng: &mut R,
) -> Result<Vec<f64>, OptimizerError> {
    if a.len() != b.len() {
        return Err(OptimizerError::DimensionMismatch(a.len(), b.len()));
    }
    if rng.random::<f64>() >= params.crossover_prob {
        return Ok(a.to_vec());
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
        .collect())
}

/// Samples `k` members with replacement and returns the index of the best.
/// Ties go to the lowest population index.
pub fn tournament_select<R: Rng + ?Sized>(
    pop: &[Candidate],
    k: usize,
    key: SelectionKey,
    rng: &mut R,
) -> Result<usize, OptimizerError> {
    if pop.is_empty() {
        return Err(OptimizerError::EmptyPopulation);
    }
    if let Some(i) = pop.iter().position(|c| key.of(c).is_none()) {
        return Err(OptimizerError::MissingKey(i));
    }
    let mut best: Option<usize> = None;
    for _ in 0..k.max(1) {
        let i = rng.random_range(0..pop.len());
        best = Some(match best {
            None => i,
            Some(b) => {
                let (kb, ki) = (key.of(&pop[b]).unwrap(), key.of(&pop[i]).unwrap());
                if ki > kb || (ki == kb && i < b) {
                    i
                } else {
                    b
                }
            }
        });
    }
    Ok(best.expect("k >= 1"))
}

/// Index of the best member; ties go to the lowest index.
pub fn best_index(pop: &[Candidate], key: SelectionKey) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in pop.iter().enumerate() {
        if let Some(v) = key.of(c) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// One generation of variation: the index of the elite to carry over and
/// `count` unevaluated offspring.
pub fn next_generation<R: Rng + ?Sized>(
    pop: &[Candidate],
    count: usize,
    key: SelectionKey,
    params: &EAParams,
    kinds: &[CoordKind],
    rng: &mut R,
) -> Result<(usize, Vec<Vec<f64>>), OptimizerError> {
    let elite = best_index(pop, key).ok_or(OptimizerError::EmptyPopulation)?;
    let mut children = Vec::with_capacity(count);
    for _ in 0..count {
        let a = tournament_select(pop, params.tournament_k, key, rng)?;
        let b = tournament_select(pop, params.tournament_k, key, rng)?;
        let child = crossover(&pop[a].vector, &pop[b].vector, params, rng)?;
        children.push(mutate(&child, params, kinds, rng));
    }
    Ok((elite, children))
}

/// Generational EA with elitism of one, keyed by `objective`.
///
/// Returns the final population sorted by key, best first.
pub fn evolve<F, E>(
    mut pop: Vec<Candidate>,
    generations: usize,
    key: SelectionKey,
    params: &EAParams,
    kinds: &[CoordKind],
    stream: RandomKey,
    mut objective: F,
) -> Result<Vec<Candidate>, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: From<OptimizerError>,
{
    let mut rng = stream.rng();
    for c in pop.iter_mut() {
        if key.of(c).is_none() {
            let v = objective(&c.vector)?;
            key.set(c, v);
        }
    }
    for _ in 0..generations {
        let count = params.population_size.saturating_sub(1).max(1);
        let (elite, children) = next_generation(&pop, count, key, params, kinds, &mut rng)?;
        let mut next = Vec::with_capacity(count + 1);
        next.push(pop[elite].clone());
        for v in children {
            let mut c = Candidate::new(v);
            let value = objective(&c.vector)?;
            key.set(&mut c, value);
            next.push(c);
        }
        pop = next;
    }
    rank(&mut pop, key);
    Ok(pop)
}

/// Stable descending sort by key.
pub fn rank(pop: &mut [Candidate], key: SelectionKey) {
    pop.sort_by(|a, b| {
        let (ka, kb) = (key.of(a).unwrap_or(f64::NEG_INFINITY), key.of(b).unwrap_or(f64::NEG_INFINITY));
        kb.total_cmp(&ka)
    });
}

/// Model inversion: evolves position designs against a surrogate and returns
/// them ranked by predicted fitness. Never calls an oracle.
///
/// The initial population is `current` (truncated to leave room) topped up
/// with random immigrants so at least [`IMMIGRANT_FRACTION`] is random.
/// `context` maps a position design to the surrogate's input vector.
pub fn evolve_on_model<M: Predictor + ?Sized>(
    model: &M,
    context: &dyn Fn(&[f64]) -> Vec<f64>,
    current: &[Vec<f64>],
    params: &EAParams,
    kinds: &[CoordKind],
    stream: RandomKey,
) -> Result<Vec<Candidate>, OptimizerError> {
    let size = params.population_size;
    let immigrants = ((size as f64) * IMMIGRANT_FRACTION).ceil() as usize;
    let kept = current.len().min(size.saturating_sub(immigrants));
    let mut rng = stream.purpose("immigrants").rng();
    let mut pop: Vec<Candidate> = current[..kept].iter().cloned().map(Candidate::new).collect();
    while pop.len() < size {
        pop.push(Candidate::new(random_vector(kinds, &mut rng)));
    }
    evolve(
        pop,
        params.generations_on_model,
        SelectionKey::Predicted,
        params,
        kinds,
        stream,
        |v| model.predict(&context(v)).map_err(OptimizerError::from),
    )
}

/// Accepts `candidate` iff it is at least `eps` away from every archived vector.
pub fn novelty_filter(candidate: &[f64], archive: &[Vec<f64>], eps: f64) -> bool {
    archive.iter().all(|a| {
        let d2: f64 = a.iter().zip(candidate).map(|(x, y)| (x - y) * (x - y)).sum();
        d2.sqrt() >= eps
    })
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone)]
pub struct MaximizeResult {
    pub best: Candidate,
    pub evaluations: usize,
    /// Best measured value after each evaluation.
    pub trace: Vec<f64>,
}

/// Direct optimization: the same EA, keyed by the measured objective, run
/// until `budget` objective calls are spent.
pub fn maximize<F>(
    kinds: &[CoordKind],
    params: &EAParams,
    budget: usize,
    stream: RandomKey,
    mut objective: F,
) -> Result<MaximizeResult, OptimizerError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut rng = stream.rng();
    let mut trace = Vec::with_capacity(budget);
    let mut best = f64::NEG_INFINITY;
    let mut measure = |v: Vec<f64>, trace: &mut Vec<f64>| {
        let y = objective(&v);
        best = best.max(y);
        trace.push(best);
        Candidate {
            vector: v,
            predicted: None,
            measured: Some(y),
        }
    };
    let initial = params.population_size.min(budget);
    let mut pop: Vec<Candidate> = (0..initial)
        .map(|_| random_vector(kinds, &mut rng))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| measure(v, &mut trace))
        .collect();
    if pop.is_empty() {
        return Err(OptimizerError::EmptyPopulation);
    }
    while trace.len() < budget {
        let count = (params.population_size - 1).max(1).min(budget - trace.len());
        let (elite, children) =
            next_generation(&pop, count, SelectionKey::Measured, params, kinds, &mut rng)?;
        let mut next = vec![pop[elite].clone()];
        next.extend(children.into_iter().map(|v| measure(v, &mut trace)));
        pop = next;
    }
    rank(&mut pop, SelectionKey::Measured);
    Ok(MaximizeResult {
        best: pop.swap_remove(0),
        evaluations: trace.len(),
        trace,
    })
}
