//! Evaluation backends.
//!
//! An oracle maps an [`ArrayConfiguration`] to a [`Measurement`]: per-turbine
//! power for every wind speed, plus the aggregate fitness. Three backends
//! exist: the synthetic interacting-array function, the manual queue fed by a
//! human at the test rig, and the exhaustive grid search used as a reference.

mod brute;
mod manual;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomKey;
use crate::space::{DesignSpace, Genome, SpaceError, Violation};

pub use brute::{brute_force_optimum, BruteForceResult, DEFAULT_GRID_CAP};
pub use manual::{
    CellIssue, ManualOracle, ManualQueue, PendingEvaluation, PendingStatus, QueueError,
    Submission,
};
pub use synthetic::{synthetic_evaluate, SyntheticOracle};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("design space lacks parameter `{0}` required by the synthetic oracle")]
    MissingParameter(&'static str),
    #[error("parameter `{name}` must be {expected}")]
    WrongParameterKind { name: &'static str, expected: &'static str },
    #[error("empty readings matrix")]
    EmptyReadings,
    #[error("ragged readings matrix: row {row} has {got} cells, expected {expected}")]
    RaggedReadings { row: usize, got: usize, expected: usize },
    #[error("grid of {points} points exceeds cap of {cap}")]
    GridTooLarge { points: u128, cap: u64 },
    #[error("invalid array configuration: {0}")]
    InvalidConfiguration(String),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Inter-turbine spacing bounds, in rotor diameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub lower: f64,
    pub upper: f64,
    /// Whether spacing is searched alongside the turbine designs.
    pub evolve: bool,
    /// Spacing used when it is not evolved (and for seeds of one-turbine arrays).
    pub initial: f64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            lower: 0.25,
            upper: 2.0,
            evolve: true,
            initial: 0.75,
        }
    }
}

impl LayoutSpec {
    pub fn normalize(&self, spacing: f64) -> f64 {
        ((spacing - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        (self.lower + u.clamp(0.0, 1.0) * (self.upper - self.lower)).clamp(self.lower, self.upper)
    }

    /// True when arrays of `positions` turbines carry a spacing coordinate.
    pub fn searched(&self, positions: usize) -> bool {
        self.evolve && positions >= 2
    }

    pub fn violations(&self, out: &mut Vec<Violation>) {
        if !(self.lower.is_finite() && self.upper.is_finite()) || self.lower <= 0.0 {
            out.push(Violation::new("layout", "bounds must be finite and positive"));
        } else if self.lower >= self.upper {
            out.push(Violation::new("layout", "empty spacing range"));
        } else if !(self.lower..=self.upper).contains(&self.initial) {
            out.push(Violation::new("layout.initial", "outside spacing bounds"));
        }
    }
}

/// The unit an oracle evaluates: N position-ordered turbine designs sharing
/// one spacing and one wind-speed schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfiguration {
    pub genomes: Vec<Genome>,
    pub spacing: f64,
    pub wind_speeds: Vec<f64>,
}

impl ArrayConfiguration {
    pub fn positions(&self) -> usize {
        self.genomes.len()
    }

    pub fn validate(&self, space: &DesignSpace, layout: &LayoutSpec) -> Result<(), OracleError> {
        if self.genomes.is_empty() {
            return Err(OracleError::InvalidConfiguration("no turbines".into()));
        }
        if !(layout.lower..=layout.upper).contains(&self.spacing) {
            return Err(OracleError::InvalidConfiguration(format!(
                "spacing {} outside [{}, {}]",
                self.spacing, layout.lower, layout.upper
            )));
        }
        validate_wind_speeds(&self.wind_speeds).map_err(OracleError::InvalidConfiguration)?;
        for g in &self.genomes {
            space.check_genome(g)?;
        }
        Ok(())
    }

    /// Concatenated normalized genomes, followed by the normalized spacing
    /// when spacing is searched. This is the surrogate input layout.
    pub fn to_unit_vector(
        &self,
        space: &DesignSpace,
        layout: &LayoutSpec,
    ) -> Result<Vec<f64>, SpaceError> {
        let mut out = Vec::with_capacity(self.genomes.len() * space.len() + 1);
        for g in &self.genomes {
            out.extend_from_slice(&space.normalize(g)?);
        }
        if layout.searched(self.genomes.len()) {
            out.push(layout.normalize(self.spacing));
        }
        Ok(out)
    }
}

pub(crate) fn validate_wind_speeds(speeds: &[f64]) -> Result<(), String> {
    if speeds.is_empty() {
        return Err("no wind speeds".into());
    }
    if let Some(v) = speeds.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(format!("wind speed {v} is not strictly positive"));
    }
    Ok(())
}

/// Overrides applied to a single array position, for asymmetric variants of
/// the synthetic rig.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionConstants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_star: Option<f64>,
}

/// Constants of the synthetic interacting-array power function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConstants {
    /// Solidity normalizer.
    pub sigma_ref: f64,
    /// Shape optimum.
    pub s_star: f64,
    /// Interaction strength.
    pub kappa: f64,
    /// Co-rotation penalty factor, in `[0, 1]`.
    pub beta: f64,
    /// Optimal spacing in rotor diameters.
    pub d_star: f64,
    /// Interaction width.
    pub w: f64,
    /// Power scale, W·s³/m³.
    pub p_ref: f64,
    /// Relative standard deviation of multiplicative reading noise.
    pub noise_eta: f64,
    /// Per-position overrides; entry `i` applies to position `i + 1`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<PositionConstants>,
}

impl Default for OracleConstants {
    fn default() -> Self {
        Self {
            sigma_ref: 1.2,
            s_star: 0.6,
            kappa: 0.5,
            beta: 0.4,
            d_star: 0.75,
            w: 0.5,
            p_ref: 1.0,
            noise_eta: 0.0,
            positions: Vec::new(),
        }
    }
}

impl OracleConstants {
    pub fn violations(&self, out: &mut Vec<Violation>) {
        let positive = [
            ("constants.sigma_ref", self.sigma_ref),
            ("constants.s_star", self.s_star),
            ("constants.kappa", self.kappa),
            ("constants.beta", self.beta),
            ("constants.d_star", self.d_star),
            ("constants.w", self.w),
            ("constants.p_ref", self.p_ref),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(Violation::new(name, "must be positive"));
            }
        }
        if self.beta > 1.0 {
            out.push(Violation::new("constants.beta", "must be in [0, 1]"));
        }
        if !(self.noise_eta.is_finite() && self.noise_eta >= 0.0) {
            out.push(Violation::new("constants.noise_eta", "must be >= 0"));
        }
        for (i, p) in self.positions.iter().enumerate() {
            for (field, v) in [("sigma_ref", p.sigma_ref), ("s_star", p.s_star)] {
                if let Some(v) = v {
                    if !(v.is_finite() && v > 0.0) {
                        out.push(Violation::new(
                            format!("constants.positions[{i}].{field}"),
                            "must be positive",
                        ));
                    }
                }
            }
        }
    }

    pub fn sigma_ref_at(&self, pos: usize) -> f64 {
        self.positions
            .get(pos)
            .and_then(|p| p.sigma_ref)
            .unwrap_or(self.sigma_ref)
    }

    pub fn s_star_at(&self, pos: usize) -> f64 {
        self.positions
            .get(pos)
            .and_then(|p| p.s_star)
            .unwrap_or(self.s_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Manual,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Manual => "manual",
        })
    }
}

/// Power readings indexed `[wind_speed][position]`, in watts.
pub type Readings = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub readings: Readings,
    pub fitness: f64,
    pub provenance: Provenance,
    pub timestamp: String,
}

impl Measurement {
    /// Wraps readings, computing fitness with [`aggregate_fitness`].
    pub fn new(readings: Readings, provenance: Provenance) -> Result<Self, OracleError> {
        let fitness = aggregate_fitness(&readings)?;
        Ok(Self {
            readings,
            fitness,
            provenance,
            timestamp: now_timestamp(),
        })
    }
}

pub(crate) fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Mean over wind speeds of the summed per-position power.
pub fn aggregate_fitness(readings: &[Vec<f64>]) -> Result<f64, OracleError> {
    let width = readings.first().map(Vec::len).unwrap_or(0);
    if width == 0 {
        return Err(OracleError::EmptyReadings);
    }
    let mut total = 0.0;
    for (row, cells) in readings.iter().enumerate() {
        if cells.len() != width {
            return Err(OracleError::RaggedReadings {
                row,
                got: cells.len(),
                expected: width,
            });
        }
        total += cells.iter().sum::<f64>();
    }
    Ok(total / readings.len() as f64)
}

/// One configuration handed to an oracle.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub pending_id: String,
    pub configuration: ArrayConfiguration,
    pub noise_key: RandomKey,
}

/// A measurement delivered for `requests[index]`.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub index: usize,
    pub measurement: Measurement,
    pub idempotency_key: Option<String>,
}

pub type EvaluationStream<'a> = Box<dyn Iterator<Item = Result<Evaluated, OracleError>> + 'a>;

/// A backend that turns array configurations into measurements.
///
/// `evaluate_batch` yields results in arrival order; synchronous backends
/// yield them in request order.
pub trait Oracle: Send + Sync {
    fn provenance(&self) -> Provenance;

    fn evaluate_batch<'a>(
        &'a self,
        requests: &'a [EvalRequest],
    ) -> Result<EvaluationStream<'a>, OracleError>;

    /// Called once the measurement for `pending_id` is journaled.
    fn committed(&self, _pending_id: &str, _record_id: u64) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_fitness(&[vec![3.0]]).unwrap(), 3.0);
        assert_eq!(aggregate_fitness(&[vec![0.4, 0.6], vec![5.0, 3.0]]).unwrap(), 4.5);
        assert_eq!(aggregate_fitness(&[vec![0.0; 3], vec![0.0; 3]]).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_rejects_empty_and_ragged() {
        assert!(matches!(aggregate_fitness(&[]), Err(OracleError::EmptyReadings)));
        assert!(matches!(
            aggregate_fitness(&[vec![]]),
            Err(OracleError::EmptyReadings)
        ));
        assert!(matches!(
            aggregate_fitness(&[vec![1.0, 2.0], vec![1.0]]),
            Err(OracleError::RaggedReadings { row: 1, .. })
        ));
    }

    #[test]
    fn constants_validation() {
        let mut out = Vec::new();
        OracleConstants::default().violations(&mut out);
        assert!(out.is_empty());
        let c = OracleConstants {
            beta: 1.5,
            kappa: -1.0,
            noise_eta: -0.1,
            ..Default::default()
        };
        c.violations(&mut out);
        assert_eq!(out.len(), 3, "{out:?}");
    }

    #[test]
    fn layout_normalization_round_trips() {
        let l = LayoutSpec::default();
        assert_eq!(l.normalize(0.25), 0.0);
        assert_eq!(l.normalize(2.0), 1.0);
        assert!((l.denormalize(l.normalize(0.75)) - 0.75).abs() < 1e-15);
        assert!(!l.searched(1));
        assert!(l.searched(2));
    }
}
