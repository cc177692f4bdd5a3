//! Run matrix orchestration: config loading, resumable execution and
//! report emission.

mod artifacts;
mod config;
mod execute;
mod reports;
mod table;

use std::io;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::costing::CostError;
use crate::gateway::GatewayError;
use crate::metrics::MetricError;
use crate::strategy::{SessionError, StrategyError, TemplateError};

pub use artifacts::{
    doc_dir_name, load_artifacts, load_transcript, CellLedgers, CellPaths, CellRecord, Exclusion,
    Manifest, RunArtifacts,
};
pub use config::{
    load_run_config, FailPolicy, RunConfig, RunPlan, ScoringConfig, ScoringPlan,
    SegmentScorerConfig, StrategyEntry, StrategyPlan, TokenizerChoice, TokenizerPolicy,
};
pub use execute::{execute, Executor};
pub use reports::{
    emit_reports, format_delta, format_score, render_reports, score_translations, REPORT_FILES,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config key `{key}`: {message}")]
    Schema { key: String, message: String },
    #[error("invalid run config: {0}")]
    Invalid(String),
    #[error("strategy {strategy} for {direction}: {source}")]
    Strategy {
        strategy: String,
        direction: String,
        #[source]
        source: StrategyError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("output directory {path} is not writable: {source}")]
    OutputNotWritable {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(
        "{path} was written by a different run config (manifest hash {found}, current {expected}); \
         choose a new run_id or output_dir"
    )]
    ManifestMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("no run manifest at {0}")]
    NoRun(String),
    #[error("persisted turn {path} does not match the request the session would send")]
    ReplayMismatch { path: String },
    #[error("run interrupted after {completed} new cells; {pending} cells pending")]
    Interrupted { completed: usize, pending: usize },
    #[error("halted: {backend}/{strategy}/{doc_id} failed: {reason}")]
    Halted {
        backend: String,
        strategy: String,
        doc_id: String,
        reason: String,
    },
}

impl RunError {
    /// Problems with the inputs, detected before or without running anything.
    pub fn is_validation(&self) -> bool {
        match self {
            RunError::Schema { .. }
            | RunError::Invalid(_)
            | RunError::Strategy { .. }
            | RunError::Template(_) => true,
            RunError::Corpus(e) => !matches!(e, CorpusError::Io { .. }),
            RunError::Gateway(e) => e.is_config(),
            _ => false,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: io::Error) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
