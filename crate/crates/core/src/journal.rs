//! Append-only experiment journal.
//!
//! One JSON document per line: a header first, then evaluation records and
//! pending-fabrication notices in the order they happened. Every line is
//! flushed and synced before the engine moves on, so any prefix that ends at
//! a line boundary is itself a valid journal. Reals use shortest round-trip
//! decimal encoding. The field-level format is documented in
//! `docs/journal-format.md`.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{RunConfig, RunMode};
use crate::oracle::{aggregate_fitness, ArrayConfiguration, Provenance, Readings};
use crate::space::DesignSpace;

pub const FORMAT_NAME: &str = "aeromine-journal";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal io: {0}")]
    Io(#[from] io::Error),
    #[error("journal has no header")]
    MissingHeader,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u64),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("non-contiguous id: expected {expected}, got {got}")]
    NonContiguousId { expected: u64, got: u64 },
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// How a proposed design came to be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalSource {
    SeedHuman,
    SeedRandom,
    Surrogate,
    Baseline,
    FallbackMutation,
}

impl ProposalSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProposalSource::SeedHuman => "seed-human",
            ProposalSource::SeedRandom => "seed-random",
            ProposalSource::Surrogate => "surrogate",
            ProposalSource::Baseline => "baseline",
            ProposalSource::FallbackMutation => "fallback-mutation",
        }
    }
}

/// One oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub record_id: u64,
    pub round: u64,
    /// 1-based array position whose archive owns the record.
    pub position: usize,
    /// Index of the proposal within its (round, position).
    pub slot: usize,
    pub source: ProposalSource,
    pub configuration: ArrayConfiguration,
    pub readings: Readings,
    pub fitness: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub timestamp: String,
}

/// A configuration handed to the operator, journaled when issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingNotice {
    pub pending_id: String,
    pub round: u64,
    pub position: usize,
    pub slot: usize,
    pub configuration: ArrayConfiguration,
    pub issued_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub mode: RunMode,
    pub space_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_key: Option<String>,
    pub config: RunConfig,
}

impl JournalHeader {
    pub fn new(config: &RunConfig, mode: RunMode) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            seed: config.seed,
            mode,
            space_fingerprint: space_fingerprint(&config.space),
            client_key: None,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Line {
    Header(JournalHeader),
    Record(EvaluationRecord),
    Pending(PendingNotice),
}

/// A journal line after the header.
#[derive(Debug, Clone, PartialEq)]
pub enum JournalEntry {
    Record(EvaluationRecord),
    Pending(PendingNotice),
}

#[derive(Debug, Clone)]
pub struct LoadedJournal {
    pub header: JournalHeader,
    pub entries: Vec<JournalEntry>,
    /// A trailing partial line was discarded.
    pub truncated_tail: bool,
    /// Byte length of the valid prefix.
    valid_len: u64,
    ends_with_newline: bool,
}

impl LoadedJournal {
    pub fn config(&self) -> &RunConfig {
        &self.header.config
    }

    pub fn records(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.entries.iter().filter_map(|e| match e {
            JournalEntry::Record(r) => Some(r),
            JournalEntry::Pending(_) => None,
        })
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingNotice> {
        self.entries.iter().filter_map(|e| match e {
            JournalEntry::Pending(p) => Some(p),
            JournalEntry::Record(_) => None,
        })
    }

    pub fn into_records(self) -> Vec<EvaluationRecord> {
        self.entries
            .into_iter()
            .filter_map(|e| match e {
                JournalEntry::Record(r) => Some(r),
                JournalEntry::Pending(_) => None,
            })
            .collect()
    }
}

/// Hex SHA-256 of the canonical JSON encoding of a design space.
pub fn space_fingerprint(space: &DesignSpace) -> String {
    let bytes = serde_json::to_vec(space).expect("design space serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_header(line: &str) -> Result<JournalHeader, JournalError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| JournalError::Corrupt {
        line: 1,
        message: e.to_string(),
    })?;
    if value.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Err(JournalError::MissingHeader);
    }
    if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
        return Err(JournalError::Corrupt {
            line: 1,
            message: "not an aeromine journal".into(),
        });
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != FORMAT_VERSION as u64 {
        return Err(JournalError::UnsupportedVersion(version));
    }
    match serde_json::from_value(value) {
        Ok(Line::Header(h)) => Ok(h),
        Ok(_) => Err(JournalError::MissingHeader),
        Err(e) => Err(JournalError::Corrupt {
            line: 1,
            message: e.to_string(),
        }),
    }
}

/// Parses journal text. A final line without a newline that fails to parse
/// is dropped and flagged; any other unparsable line is an error.
pub fn parse(text: &str) -> Result<LoadedJournal, JournalError> {
    let ends_with_newline = text.ends_with('\n');
    let mut lines: Vec<&str> = text.split('\n').collect();
    if ends_with_newline {
        lines.pop();
    }
    let first = lines.first().filter(|l| !l.is_empty()).ok_or(JournalError::MissingHeader)?;
    if lines.len() == 1 && !ends_with_newline && parse_header(first).is_err() {
        return Err(JournalError::MissingHeader);
    }
    let header = parse_header(first)?;

    let mut entries = Vec::new();
    let mut truncated_tail = false;
    let mut valid_len = first.len() as u64 + 1;
    let mut next_id = 1u64;
    let last = lines.len() - 1;
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let partial = i == last && !ends_with_newline;
        let parsed: Result<Line, _> = serde_json::from_str(raw);
        let line = match parsed {
            Ok(l) => l,
            Err(_) if partial => {
                truncated_tail = true;
                break;
            }
            Err(e) => {
                return Err(JournalError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        };
        match line {
            Line::Header(_) => {
                return Err(JournalError::Corrupt {
                    line: line_no,
                    message: "second header".into(),
                })
            }
            Line::Record(r) => {
                if r.record_id != next_id {
                    return Err(JournalError::Corrupt {
                        line: line_no,
                        message: format!("record id {} where {} expected", r.record_id, next_id),
                    });
                }
                let recomputed = aggregate_fitness(&r.readings).map_err(|e| JournalError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })?;
                if recomputed.to_bits() != r.fitness.to_bits() {
                    return Err(JournalError::Corrupt {
                        line: line_no,
                        message: "fitness does not match readings".into(),
                    });
                }
                next_id += 1;
                entries.push(JournalEntry::Record(r));
            }
            Line::Pending(p) => entries.push(JournalEntry::Pending(p)),
        }
        valid_len += raw.len() as u64 + if partial { 0 } else { 1 };
    }
    Ok(LoadedJournal {
        header,
        entries,
        truncated_tail,
        valid_len,
        ends_with_newline: ends_with_newline || truncated_tail,
    })
}

pub fn load(path: &Path) -> Result<LoadedJournal, JournalError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse(&text)
}

/// Journal lines with timestamps removed, for determinism comparisons.
pub fn canonical_lines(path: &Path) -> Result<Vec<String>, JournalError> {
    let loaded = load(path)?;
    let mut out = Vec::with_capacity(loaded.entries.len() + 1);
    let header = serde_json::to_value(Line::Header(loaded.header))?;
    out.push(header.to_string());
    for e in loaded.entries {
        let mut v = match e {
            JournalEntry::Record(r) => serde_json::to_value(Line::Record(r))?,
            JournalEntry::Pending(p) => serde_json::to_value(Line::Pending(p))?,
        };
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timestamp");
            obj.remove("issued_at");
        }
        out.push(v.to_string());
    }
    Ok(out)
}

/// Single writer for one journal file.
#[derive(Debug)]
pub struct JournalWriter {
    file: File,
    path: PathBuf,
    last_record_id: u64,
}

impl JournalWriter {
    /// Creates a new journal; fails if the file exists.
    pub fn create(path: &Path, header: &JournalHeader) -> Result<Self, JournalError> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        let mut w = Self {
            file,
            path: path.to_path_buf(),
            last_record_id: 0,
        };
        w.write_line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    /// Opens an existing journal for appending, dropping a partial tail.
    pub fn open(path: &Path) -> Result<(Self, LoadedJournal), JournalError> {
        let loaded = load(path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len(loaded.valid_len)?;
        file.seek(SeekFrom::End(0))?;
        if !loaded.ends_with_newline {
            file.write_all(b"\n")?;
        }
        file.sync_data()?;
        let last_record_id = loaded.records().last().map(|r| r.record_id).unwrap_or(0);
        Ok((
            Self {
                file,
                path: path.to_path_buf(),
                last_record_id,
            },
            loaded,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_record_id(&self) -> u64 {
        self.last_record_id
    }

    fn write_line(&mut self, line: &Line) -> Result<(), JournalError> {
        let mut buf = serde_json::to_vec(line)?;
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn append(&mut self, record: &EvaluationRecord) -> Result<(), JournalError> {
        if record.record_id != self.last_record_id + 1 {
            return Err(JournalError::NonContiguousId {
                expected: self.last_record_id + 1,
                got: record.record_id,
            });
        }
        self.write_line(&Line::Record(record.clone()))?;
        self.last_record_id = record.record_id;
        Ok(())
    }

    pub fn append_pending(&mut self, notice: &PendingNotice) -> Result<(), JournalError> {
        self.write_line(&Line::Pending(notice.clone()))
    }
}
