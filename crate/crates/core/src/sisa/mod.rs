//! Sharded, isolated, sliced, aggregated training and exact unlearning.
//!
//! Each shard owns one constituent model trained incrementally over
//! cumulative slices, with a checkpoint after every stage. Removing a
//! condition reloads the checkpoint taken just before its slice first
//! entered training and replays the remaining stages without it. Every random
//! draw is keyed by (shard, stage, epoch[, batch]), so the replay is bitwise
//! identical to training from scratch on the retained data.

mod checkpoint;
mod ensemble;
mod plan;
mod store;
mod train;
mod unlearn;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::NnError;

pub use checkpoint::{Checkpoint, RngCursor, FORMAT_VERSION, MAGIC};
pub use ensemble::{aggregate_predict, aggregate_probabilities, predict_batch, EnsemblePrediction};
pub use plan::{default_slices, plan_shards, ShardSlicePlan, ShardStrategy, Slot};
pub use store::{CheckpointStore, DirStore, MemoryStore};
pub use train::{
    partition_by_shard, stage_epochs, train_all, train_shard, ConstituentModel, DataFingerprint, ShardJob, ShardRun,
    ShardTrainReport, TrainConfig, TrainOutcome,
};
pub use unlearn::{locate_affected, oracle_retrain, unlearn, UnlearnOutcome, UnlearnReport, UnlearnRequest};

#[derive(Debug, Error)]
pub enum SisaError {
    #[error("invalid shard plan: {0}")]
    Plan(String),
    #[error("unknown condition id {0}")]
    UnknownCondition(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing checkpoint for shard {shard} stage {stage}")]
    MissingCheckpoint { shard: usize, stage: usize },
    #[error("training data does not match the plan: {0}")]
    DataMismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged in shard {shard}, stage {stage}, epoch {epoch}: {detail}")]
    Diverged {
        shard: usize,
        stage: usize,
        epoch: usize,
        detail: String,
    },
    #[error("unlearn request is empty")]
    EmptyRequest,
    #[error("condition {0} is not present in the trained models")]
    NotPresent(usize),
    #[error("constituent models have different configurations")]
    HeterogeneousModels,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
