//! The campaign loop: carrier fuzzing, bottleneck detection, and the
//! reward / attention / guidance pipeline that runs when coverage stalls.

mod campaign;
mod config;
mod crash;
mod export;
mod history;

use std::path::Path;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::coverage::CoverageError;
use crate::mutation::MutationError;
use crate::target::TargetError;

pub use campaign::{
    run_campaign, run_campaign_with_dict, CampaignReport, OpCounters, PipelineRun, SeedEntry, TrainedModel, WindowStats,
};
pub use config::{FuzzerConfig, Mode};
pub use crash::{triage_crash, CrashReport, Lineage, Triage};
pub use export::{critical_ratio_csv, export_stats, report_text};
pub use history::{detect_bottleneck, CoverageHistory, HistoryRow};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("the initial corpus is empty")]
    EmptyCorpus,
    #[error("corpus input {index} has {len} bytes, more than max_input_len = {max}")]
    InputTooLong { index: usize, len: usize, max: usize },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

impl OrchestratorError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}
