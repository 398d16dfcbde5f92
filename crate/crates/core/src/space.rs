//! Turbine design parameterization.
//!
//! A [`DesignSpace`] is an ordered list of named, bounded parameters. Genomes
//! hold raw values (metres, blade counts, level labels); search and modelling
//! happen on [`UnitVector`]s where every coordinate lives in `[0, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid design space: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("length mismatch: space has {expected} parameters, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter `{name}`: value {value} out of bounds")]
    OutOfBounds { name: String, value: String },
    #[error("parameter `{name}`: expected {expected} value")]
    WrongValueType { name: String, expected: &'static str },
    #[error("coordinate {index} = {value} outside [0, 1]")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("missing value for parameter `{0}`")]
    MissingValue(String),
}

/// One problem found while validating configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub reason: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Continuous,
    Integer,
    Categorical,
}

/// A named design parameter. Numeric kinds use `lower`/`upper`, categorical
/// kinds use `levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default)]
    pub units: String,
}

impl ParameterSpec {
    pub fn continuous(name: &str, lower: f64, upper: f64, units: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous,
            lower: Some(lower),
            upper: Some(upper),
            levels: Vec::new(),
            units: units.into(),
        }
    }

    pub fn integer(name: &str, lower: i64, upper: i64, units: &str) -> Self {
        Self {
            kind: ParamKind::Integer,
            ..Self::continuous(name, lower as f64, upper as f64, units)
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical,
            lower: None,
            upper: None,
            levels: levels.iter().map(|s| s.to_string()).collect(),
            units: String::new(),
        }
    }

    /// Numeric bounds; `(0, 0)` for categorical parameters.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower.unwrap_or(0.0), self.upper.unwrap_or(0.0))
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let subject = if self.name.is_empty() {
            "<unnamed>".to_string()
        } else {
            self.name.clone()
        };
        if self.name.trim().is_empty() {
            out.push(Violation::new(&subject, "empty name"));
        }
        match self.kind {
            ParamKind::Continuous | ParamKind::Integer => {
                if !self.levels.is_empty() {
                    out.push(Violation::new(&subject, "levels given for a numeric parameter"));
                }
                match (self.lower, self.upper) {
                    (Some(lo), Some(hi)) => {
                        if !lo.is_finite() || !hi.is_finite() {
                            out.push(Violation::new(&subject, "non-finite bound"));
                        } else if lo >= hi {
                            out.push(Violation::new(&subject, "empty range"));
                        }
                        if self.kind == ParamKind::Integer
                            && (lo.fract() != 0.0 || hi.fract() != 0.0)
                        {
                            out.push(Violation::new(&subject, "integer bounds must be integral"));
                        }
                    }
                    _ => out.push(Violation::new(&subject, "missing lower/upper bound")),
                }
            }
            ParamKind::Categorical => {
                if self.lower.is_some() || self.upper.is_some() {
                    out.push(Violation::new(&subject, "bounds given for a categorical parameter"));
                }
                let distinct: HashSet<&String> = self.levels.iter().collect();
                if self.levels.len() < 2 {
                    out.push(Violation::new(&subject, "fewer than 2 levels"));
                } else if distinct.len() != self.levels.len() {
                    out.push(Violation::new(&subject, "duplicate level"));
                }
            }
        }
    }

    pub fn check_value(&self, value: &ParamValue) -> Result<(), SpaceError> {
        let oob = || SpaceError::OutOfBounds {
            name: self.name.clone(),
            value: value.to_string(),
        };
        match (self.kind, value) {
            (ParamKind::Categorical, ParamValue::Level(l)) => {
                if self.levels.contains(l) {
                    Ok(())
                } else {
                    Err(oob())
                }
            }
            (ParamKind::Categorical, _) => Err(SpaceError::WrongValueType {
                name: self.name.clone(),
                expected: "a level label",
            }),
            (kind, ParamValue::Number(v)) => {
                let (lo, hi) = self.bounds();
                if !v.is_finite() || *v < lo || *v > hi {
                    return Err(oob());
                }
                if kind == ParamKind::Integer && v.fract() != 0.0 {
                    return Err(SpaceError::WrongValueType {
                        name: self.name.clone(),
                        expected: "an integral",
                    });
                }
                Ok(())
            }
            (_, ParamValue::Level(_)) => Err(SpaceError::WrongValueType {
                name: self.name.clone(),
                expected: "a numeric",
            }),
        }
    }

    fn normalize_value(&self, value: &ParamValue) -> Result<f64, SpaceError> {
        self.check_value(value)?;
        Ok(match value {
            ParamValue::Number(v) => {
                let (lo, hi) = self.bounds();
                (v - lo) / (hi - lo)
            }
            ParamValue::Level(l) => {
                let idx = self.levels.iter().position(|x| x == l).unwrap_or(0);
                idx as f64 / (self.levels.len() - 1) as f64
            }
        })
    }

    fn denormalize_coord(&self, u: f64) -> ParamValue {
        match self.kind {
            ParamKind::Continuous => {
                let (lo, hi) = self.bounds();
                ParamValue::Number((lo + u * (hi - lo)).clamp(lo, hi))
            }
            ParamKind::Integer => {
                let (lo, hi) = self.bounds();
                // ties round toward the upper bound
                let raw = lo + u * (hi - lo);
                ParamValue::Number((raw + 0.5).floor().clamp(lo, hi))
            }
            ParamKind::Categorical => {
                let last = self.levels.len() - 1;
                let idx = ((u * last as f64 + 0.5).floor() as usize).min(last);
                ParamValue::Level(self.levels[idx].clone())
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self.kind {
            ParamKind::Continuous => {
                let (lo, hi) = self.bounds();
                ParamValue::Number(rng.random_range(lo..=hi))
            }
            ParamKind::Integer => {
                let (lo, hi) = self.bounds();
                ParamValue::Number(rng.random_range(lo as i64..=hi as i64) as f64)
            }
            ParamKind::Categorical => {
                let idx = rng.random_range(0..self.levels.len());
                ParamValue::Level(self.levels[idx].clone())
            }
        }
    }
}

/// A raw parameter value: a number (continuous or integral) or a level label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Level(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(v) => Some(*v),
            ParamValue::Level(_) => None,
        }
    }

    pub fn as_level(&self) -> Option<&str> {
        match self {
            ParamValue::Level(l) => Some(l),
            ParamValue::Number(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Level(l) => f.write_str(l),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Level(v.to_string())
    }
}

/// Ordered parameter list. The order fixes the layout of genomes and vectors
/// for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignSpace {
    pub parameters: Vec<ParameterSpec>,
}

impl Default for DesignSpace {
    /// blades, chord, shape and rotation direction of one turbine.
    fn default() -> Self {
        Self::new(vec![
            ParameterSpec::integer("blades", 2, 6, "count"),
            ParameterSpec::continuous("chord", 0.05, 0.5, "m"),
            ParameterSpec::continuous("shape", 0.0, 1.0, "dimensionless"),
            ParameterSpec::categorical("rotation", &["CW", "CCW"]),
        ])
    }
}

impl DesignSpace {
    pub fn new(parameters: Vec<ParameterSpec>) -> Self {
        Self { parameters }
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// Every violated invariant, or `Ok` for a well-formed space.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.parameters.is_empty() {
            out.push(Violation::new("space", "no parameters"));
        }
        let mut seen = HashSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                out.push(Violation::new(&p.name, "duplicate name"));
            }
            p.violations(&mut out);
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn check_genome(&self, genome: &Genome) -> Result<(), SpaceError> {
        if genome.values.len() != self.len() {
            return Err(SpaceError::LengthMismatch {
                expected: self.len(),
                got: genome.values.len(),
            });
        }
        for (spec, v) in self.parameters.iter().zip(&genome.values) {
            spec.check_value(v)?;
        }
        Ok(())
    }

    pub fn normalize(&self, genome: &Genome) -> Result<UnitVector, SpaceError> {
        if genome.values.len() != self.len() {
            return Err(SpaceError::LengthMismatch {
                expected: self.len(),
                got: genome.values.len(),
            });
        }
        let coords = self
            .parameters
            .iter()
            .zip(&genome.values)
            .map(|(spec, v)| spec.normalize_value(v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(UnitVector(coords))
    }

    pub fn denormalize(&self, vector: &[f64]) -> Result<Genome, SpaceError> {
        if vector.len() != self.len() {
            return Err(SpaceError::LengthMismatch {
                expected: self.len(),
                got: vector.len(),
            });
        }
        for (index, &value) in vector.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SpaceError::CoordinateOutOfRange { index, value });
            }
        }
        Ok(Genome {
            values: self
                .parameters
                .iter()
                .zip(vector)
                .map(|(spec, &u)| spec.denormalize_coord(u))
                .collect(),
        })
    }

    /// Uniform draw over every parameter's range or levels.
    pub fn random_genome(&self, key: RandomKey) -> Result<Genome, SpaceError> {
        self.validate().map_err(SpaceError::Invalid)?;
        let mut rng = key.rng();
        Ok(self.sample_genome(&mut rng))
    }

    pub(crate) fn sample_genome<R: Rng + ?Sized>(&self, rng: &mut R) -> Genome {
        Genome {
            values: self.parameters.iter().map(|p| p.sample(rng)).collect(),
        }
    }

    /// Builds a genome from a name → value map; every parameter must be given.
    pub fn genome_from_map(
        &self,
        values: &BTreeMap<String, ParamValue>,
    ) -> Result<Genome, SpaceError> {
        if let Some(unknown) = values.keys().find(|k| self.index_of(k).is_none()) {
            return Err(SpaceError::UnknownParameter(unknown.clone()));
        }
        let genome = Genome {
            values: self
                .parameters
                .iter()
                .map(|p| {
                    values
                        .get(&p.name)
                        .cloned()
                        .ok_or_else(|| SpaceError::MissingValue(p.name.clone()))
                })
                .collect::<Result<_, _>>()?,
        };
        self.check_genome(&genome)?;
        Ok(genome)
    }

    /// How each coordinate behaves under variation operators.
    pub fn coordinate_kinds(&self) -> Vec<CoordKind> {
        self.parameters
            .iter()
            .map(|p| match p.kind {
                ParamKind::Categorical => CoordKind::Categorical {
                    levels: p.levels.len(),
                },
                _ => CoordKind::Numeric,
            })
            .collect()
    }
}

/// Behaviour of a normalized coordinate under mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    Numeric,
    Categorical { levels: usize },
}

/// One turbine design: raw values in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genome {
    pub values: Vec<ParamValue>,
}

impl Genome {
    pub fn new(values: Vec<ParamValue>) -> Self {
        Self { values }
    }

    pub fn get(&self, space: &DesignSpace, name: &str) -> Option<&ParamValue> {
        space.index_of(name).and_then(|i| self.values.get(i))
    }
}

/// Normalized design vector, coordinates in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(pub Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for UnitVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}
