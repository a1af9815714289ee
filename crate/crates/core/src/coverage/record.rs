use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::global::BlockSet;
use super::CoverageError;
use crate::mutation::{Mutation, MutatorId};

/// Mutator column value for stacked havoc mutations.
pub const HAVOC_NAME: &str = "havoc";

/// One fuzzed execution.
///
/// `mutator == None` marks a stacked havoc step, which has no single site:
/// `position` is then -1 and the record never enters a training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub exec_id: u64,
    pub parent_seed: u64,
    pub mutator: Option<MutatorId>,
    pub param: i64,
    pub position: i64,
    pub input_len: usize,
    pub covered_blocks: BlockSet,
    pub new_coverage: bool,
    pub crashed: bool,
}

impl ExecutionRecord {
    /// The single-site mutation this record describes, if any.
    pub fn mutation(&self) -> Option<Mutation> {
        let m = self.mutator?;
        if self.position < 0 || self.param < 0 {
            return None;
        }
        Some(Mutation::new(m, self.position as usize, self.param as u32))
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.exec_id,
            self.parent_seed,
            self.mutator.map_or(HAVOC_NAME, MutatorId::name),
            self.param,
            self.position,
            self.input_len,
            self.covered_blocks.to_hex(),
            self.new_coverage as u8,
            self.crashed as u8
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields, found {}", f.len()));
        }
        let int = |i: usize, what: &str| f[i].parse::<i64>().map_err(|_| format!("bad {what} {:?}", f[i]));
        let uint = |i: usize, what: &str| f[i].parse::<u64>().map_err(|_| format!("bad {what} {:?}", f[i]));
        let flag = |i: usize, what: &str| match f[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(format!("bad {what} flag {s:?}")),
        };
        let mutator = match f[2] {
            HAVOC_NAME => None,
            s => Some(s.parse::<MutatorId>().map_err(|e| e.to_string())?),
        };
        let covered_blocks = BlockSet::from_hex(f[6]).ok_or_else(|| format!("bad coverage bitset {:?}", f[6]))?;
        if covered_blocks.is_empty() {
            return Err("empty coverage bitset".into());
        }
        Ok(Self {
            exec_id: uint(0, "exec_id")?,
            parent_seed: uint(1, "parent_seed")?,
            mutator,
            param: int(3, "param")?,
            position: int(4, "position")?,
            input_len: uint(5, "input_len")? as usize,
            covered_blocks,
            new_coverage: flag(7, "new_coverage")?,
            crashed: flag(8, "crashed")?,
        })
    }
}

/// Append-only writer for `records.log`.
pub struct RecordLog {
    out: BufWriter<File>,
}

impl RecordLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: &Path) -> Result<Self, CoverageError> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| CoverageError::io(path, e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    /// Truncates any existing log.
    pub fn create(path: &Path) -> Result<Self, CoverageError> {
        let f = File::create(path).map_err(|e| CoverageError::io(path, e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn append(&mut self, rec: &ExecutionRecord) -> Result<(), CoverageError> {
        writeln!(self.out, "{}", rec.to_line()).map_err(|e| CoverageError::Io(e.to_string()))
    }

    pub fn flush(&mut self) -> Result<(), CoverageError> {
        self.out.flush().map_err(|e| CoverageError::Io(e.to_string()))
    }
}

impl Drop for RecordLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Appends records to `path` in one go.
pub fn append_records(path: &Path, records: &[ExecutionRecord]) -> Result<(), CoverageError> {
    let mut log = RecordLog::open(path)?;
    for r in records {
        log.append(r)?;
    }
    log.flush()
}

/// Result of a load; `skipped` lists `(line, reason)` for corrupt lines
/// dropped in tolerant mode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedRecords {
    pub records: Vec<ExecutionRecord>,
    pub skipped: Vec<(usize, String)>,
}

/// Parses log text. Strict mode fails on the first corrupt line; tolerant
/// mode skips it. Records come back sorted by `exec_id`.
pub fn parse_records(text: &str, strict: bool) -> Result<LoadedRecords, CoverageError> {
    let mut out = LoadedRecords::default();
    let complete = text.is_empty() || text.ends_with('\n');
    let n_lines = text.lines().count();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parsed = if i + 1 == n_lines && !complete {
            ExecutionRecord::parse_line(line).and_then(|_| Err("truncated final line".to_string()))
        } else {
            ExecutionRecord::parse_line(line)
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(msg) if strict => return Err(CoverageError::Corrupt { line: i + 1, msg }),
            Err(msg) => out.skipped.push((i + 1, msg)),
        }
    }
    out.records.sort_by_key(|r| r.exec_id);
    Ok(out)
}

pub fn load_records(path: &Path, strict: bool) -> Result<LoadedRecords, CoverageError> {
    let text = std::fs::read_to_string(path).map_err(|e| CoverageError::io(path, e))?;
    parse_records(&text, strict)
}
