//! The four-case depoisoning experiment, the shard sweep and their reports.
//!
//! | case | model            | training data      |
//! |------|------------------|--------------------|
//! | 1    | one, unsliced    | poisoned           |
//! | 2    | SISA ensemble    | poisoned           |
//! | 3    | one, unsliced    | clean, from scratch|
//! | 4    | SISA ensemble    | case 2, unlearned  |
//!
//! Cases 1 and 2 are scored on the full test split; cases 3 and 4 on the test
//! split without the poisoned conditions.

mod config;
mod data;
mod metrics;
mod report;
mod runner;

use std::path::PathBuf;

use thiserror::Error;

use crate::signal::SignalError;
use crate::sisa::SisaError;

pub use config::{six_poison, single_poison, EmiSettings, EmiTarget, ExperimentConfig, Profile};
pub use data::{poison_recordings, PreparedData};
pub use metrics::{median, ConfusionMatrix};
pub use report::{emit_reports, summary_csv};
pub use runner::{CaseReport, Experiment, SweepOutcome, SweepReport, SweepRow, TrainedEnsemble};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Sisa(#[from] SisaError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    pub fn context(self, context: impl Into<String>) -> Self {
        Self::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
