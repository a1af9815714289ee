//! Coverage bookkeeping: the AFL-style hashed bitmap, exact per-block
//! counters and the execution-record log.
//!
//! Learning labels come from the exact counters; the bitmap path mirrors
//! what a binary fuzzer would see and is kept for inspection.

mod bitmap;
mod global;
mod record;

use std::path::Path;

use thiserror::Error;

use crate::target::BlockId;

pub use bitmap::{edge_hash_index, CoverageBitmap, EdgeHashDict, DEFAULT_MAP_SIZE};
pub use global::{update_from_trace, BlockSet, GlobalCoverage};
pub use record::{append_records, load_records, parse_records, ExecutionRecord, LoadedRecords, RecordLog, HAVOC_NAME};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("map size {0} is not a power of two")]
    MapSize(usize),
    #[error("block {0} is not registered")]
    UnknownBlock(BlockId),
    #[error("corrupt record on line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl CoverageError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}
