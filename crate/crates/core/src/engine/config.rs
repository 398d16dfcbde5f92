use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::optimizer::EAParams;
use crate::oracle::{LayoutSpec, OracleConstants, SyntheticOracle};
use crate::space::{DesignSpace, ParamValue, Violation};
use crate::surrogate::FitHyper;

pub const MAX_POSITIONS: usize = 6;

/// Whether proposals come from model inversion or from direct evaluation of
/// every offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Surrogate,
    Baseline,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Surrogate => "surrogate",
            RunMode::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Synthetic,
    Manual,
}

/// A human-specified seed design. Without a position it seeds every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedDesign {
    /// 1-based array position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub values: BTreeMap<String, ParamValue>,
}

/// Fixes a parameter to one value, at one position or everywhere.
///
/// Pinning `rotation` per position reproduces rigs where turbines cannot be
/// reversed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub parameter: String,
    pub value: ParamValue,
}

/// Everything that determines a run. Omitted fields take their defaults, and
/// the filled-in config is echoed into the journal header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub positions: usize,
    pub seed: u64,
    /// Maximum number of oracle evaluations.
    pub budget: u64,
    pub seeds_per_position: usize,
    pub proposals_per_iteration: usize,
    pub wind_speeds: Vec<f64>,
    pub oracle: OracleKind,
    #[serde(rename = "parameter")]
    pub space: DesignSpace,
    pub layout: LayoutSpec,
    pub constants: OracleConstants,
    pub ea: EAParams,
    pub fit: FitHyper,
    #[serde(rename = "seed_design", skip_serializing_if = "Vec::is_empty")]
    pub seed_designs: Vec<SeedDesign>,
    #[serde(rename = "pin", skip_serializing_if = "Vec::is_empty")]
    pub pins: Vec<Pin>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            positions: 2,
            seed: 0,
            budget: 300,
            seeds_per_position: 10,
            proposals_per_iteration: 1,
            wind_speeds: vec![1.0],
            oracle: OracleKind::Synthetic,
            space: DesignSpace::default(),
            layout: LayoutSpec::default(),
            constants: OracleConstants::default(),
            ea: EAParams::default(),
            fit: FitHyper::default(),
            seed_designs: Vec::new(),
            pins: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Number of evaluations spent on seeding.
    pub fn seeding_size(&self) -> u64 {
        (self.positions * self.seeds_per_position) as u64
    }

    /// Every violated constraint, or `Ok` when the config is runnable.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if let Err(v) = self.space.validate() {
            out.extend(v);
        }
        let space_ok = out.is_empty();
        if !(1..=MAX_POSITIONS).contains(&self.positions) {
            out.push(Violation::new(
                "positions",
                format!("must be in 1..={MAX_POSITIONS}"),
            ));
        }
        if self.seeds_per_position == 0 {
            out.push(Violation::new("seeds_per_position", "must be at least 1"));
        }
        if self.proposals_per_iteration == 0 {
            out.push(Violation::new("proposals_per_iteration", "must be at least 1"));
        }
        if self.budget < self.seeding_size() {
            out.push(Violation::new(
                "budget",
                format!(
                    "must be at least positions * seeds_per_position = {}",
                    self.seeding_size()
                ),
            ));
        }
        if let Err(e) = crate::oracle::validate_wind_speeds(&self.wind_speeds) {
            out.push(Violation::new("wind_speeds", e));
        }
        self.layout.violations(&mut out);
        self.constants.violations(&mut out);
        if self.constants.positions.len() > self.positions {
            out.push(Violation::new(
                "constants.positions",
                "more entries than array positions",
            ));
        }
        out.extend(self.ea.violations().into_iter().map(|r| Violation::new("ea", r)));
        out.extend(self.fit.violations().into_iter().map(|r| Violation::new("fit", r)));

        if space_ok {
            if self.oracle == OracleKind::Synthetic {
                if let Err(e) = SyntheticOracle::new(&self.space, self.constants.clone()) {
                    out.push(Violation::new("parameter", e.to_string()));
                }
            }
            self.check_seeds(&mut out);
            self.check_pins(&mut out);
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    fn position_ok(&self, position: Option<usize>) -> bool {
        position.is_none_or(|p| (1..=self.positions).contains(&p))
    }

    fn check_seeds(&self, out: &mut Vec<Violation>) {
        let mut per_position = vec![0usize; self.positions.max(1)];
        for (i, s) in self.seed_designs.iter().enumerate() {
            let subject = format!("seed_design[{i}]");
            if !self.position_ok(s.position) {
                out.push(Violation::new(subject.clone(), "position out of range"));
                continue;
            }
            if let Err(e) = self.space.genome_from_map(&s.values) {
                out.push(Violation::new(subject, e.to_string()));
            }
            match s.position {
                Some(p) => per_position[p - 1] += 1,
                None => per_position.iter_mut().for_each(|c| *c += 1),
            }
        }
        for (p, &count) in per_position.iter().enumerate() {
            if count > self.seeds_per_position {
                out.push(Violation::new(
                    "seed_design",
                    format!(
                        "position {} has {count} seed designs but seeds_per_position is {}",
                        p + 1,
                        self.seeds_per_position
                    ),
                ));
            }
        }
    }

    fn check_pins(&self, out: &mut Vec<Violation>) {
        for (i, pin) in self.pins.iter().enumerate() {
            let subject = format!("pin[{i}]");
            if !self.position_ok(pin.position) {
                out.push(Violation::new(subject.clone(), "position out of range"));
            }
            match self.space.index_of(&pin.parameter) {
                None => out.push(Violation::new(
                    subject,
                    format!("unknown parameter `{}`", pin.parameter),
                )),
                Some(idx) => {
                    if let Err(e) = self.space.parameters[idx].check_value(&pin.value) {
                        out.push(Violation::new(subject, e.to_string()));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn every_violation_is_reported() {
        let cfg = RunConfig {
            positions: 7,
            budget: 5,
            wind_speeds: vec![],
            pins: vec![Pin {
                position: None,
                parameter: "colour".into(),
                value: ParamValue::Level("red".into()),
            }],
            ..Default::default()
        };
        let v = cfg.validate().unwrap_err();
        let subjects: Vec<&str> = v.iter().map(|v| v.subject.as_str()).collect();
        assert!(subjects.contains(&"positions"));
        assert!(subjects.contains(&"budget"));
        assert!(subjects.contains(&"wind_speeds"));
        assert!(subjects.contains(&"pin[0]"));
    }

    #[test]
    fn too_many_seed_designs() {
        let values: BTreeMap<String, ParamValue> = [
            ("blades", ParamValue::Number(3.0)),
            ("chord", ParamValue::Number(0.2)),
            ("shape", ParamValue::Number(0.5)),
            ("rotation", ParamValue::Level("CW".into())),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let cfg = RunConfig {
            seeds_per_position: 1,
            seed_designs: vec![
                SeedDesign {
                    position: None,
                    values: values.clone(),
                },
                SeedDesign {
                    position: Some(2),
                    values,
                },
            ],
            ..Default::default()
        };
        let v = cfg.validate().unwrap_err();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].reason.contains("position 2"));
    }

    #[test]
    fn synthetic_oracle_needs_its_parameters() {
        let cfg = RunConfig {
            space: DesignSpace::new(vec![crate::space::ParameterSpec::continuous("x", 0.0, 1.0, "")]),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let manual = RunConfig {
            oracle: OracleKind::Manual,
            ..cfg
        };
        manual.validate().unwrap();
    }
}
