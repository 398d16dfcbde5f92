//! Journal to CSV.
//!
//! Column order is fixed:
//!
//! 1. `record_id, round, position, slot, source, provenance, fitness, spacing,
//!    pending_id, idempotency_key, timestamp`
//! 2. `t{t}.{parameter}` for every turbine `t` (1-based, array order) and every
//!    design parameter in config order
//! 3. `wind_speed.{i}` for every wind speed `i` (1-based)
//! 4. `power.v{i}.t{t}`, the reading of turbine `t` at wind speed `i`, speed
//!    major
//!
//! Numbers are written in shortest round-trip form, so the table reloads to
//! the journaled values exactly. Absent optional fields are empty cells.

use std::path::Path;

use aeromine_core::{EvaluationRecord, LoadedJournal};

use crate::error::CliError;

const FIXED: [&str; 11] = [
    "record_id",
    "round",
    "position",
    "slot",
    "source",
    "provenance",
    "fitness",
    "spacing",
    "pending_id",
    "idempotency_key",
    "timestamp",
];

pub fn header(journal: &LoadedJournal) -> Vec<String> {
    let config = journal.config();
    let mut cols: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for t in 1..=config.positions {
        for p in &config.space.parameters {
            cols.push(format!("t{t}.{}", p.name));
        }
    }
    for i in 1..=config.wind_speeds.len() {
        cols.push(format!("wind_speed.{i}"));
    }
    for i in 1..=config.wind_speeds.len() {
        for t in 1..=config.positions {
            cols.push(format!("power.v{i}.t{t}"));
        }
    }
    cols
}

fn row(r: &EvaluationRecord) -> Vec<String> {
    let mut out = vec![
        r.record_id.to_string(),
        r.round.to_string(),
        r.position.to_string(),
        r.slot.to_string(),
        r.source.as_str().to_string(),
        r.provenance.to_string(),
        r.fitness.to_string(),
        r.configuration.spacing.to_string(),
        r.pending_id.clone().unwrap_or_default(),
        r.idempotency_key.clone().unwrap_or_default(),
        r.timestamp.clone(),
    ];
    for g in &r.configuration.genomes {
        out.extend(g.values.iter().map(ToString::to_string));
    }
    out.extend(r.configuration.wind_speeds.iter().map(ToString::to_string));
    for speed in &r.readings {
        out.extend(speed.iter().map(ToString::to_string));
    }
    out
}

/// Writes every record of `journal` to `out`; returns the number of rows.
pub fn write_csv(journal: &LoadedJournal, out: &Path) -> Result<usize, CliError> {
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(header(journal))?;
    let mut rows = 0;
    for r in journal.records() {
        w.write_record(row(r))?;
        rows += 1;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    Ok(rows)
}
