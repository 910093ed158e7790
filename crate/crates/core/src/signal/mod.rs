//! Synthetic fault recordings, EMI poisoning, windowing and dataset splits.

mod condition;
mod emi;
mod generate;
pub mod io;
mod split;
mod window;

use std::path::PathBuf;

use thiserror::Error;

pub use condition::{channel_index, FaultCondition, Phase, Side, CLASS_NAMES, MAX_SEVERITY, NUM_CLASSES, NUM_CONDITIONS};
pub use emi::{apply_emi, EmiSpec};
pub use generate::{
    condition_seed, generate_all, generate_condition, Recording, DURATION_S, NOMINAL_FREQ_HZ, NOMINAL_PEAK_A,
    SAMPLES_PER_CHANNEL, SAMPLE_RATE_HZ,
};
pub use split::{split_counts, split_dataset, DatasetSplit, StandardizationStats, SPLIT_RATIOS};
pub use window::{window_recording, window_starts, WindowedSample, DEFAULT_STRIDE, DEFAULT_WINDOW_LEN};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid fault condition: {0}")]
    InvalidCondition(String),
    #[error("invalid EMI spec: {0}")]
    InvalidEmi(String),
    #[error("invalid windowing: {0}")]
    InvalidWindow(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Windows every recording and splits the result.
pub fn build_dataset(
    recordings: &[Recording],
    window_len: usize,
    stride: usize,
    split_seed: u64,
) -> Result<DatasetSplit, SignalError> {
    let per_condition = recordings
        .iter()
        .map(|r| window_recording(r, window_len, stride))
        .collect::<Result<Vec<_>, _>>()?;
    split_dataset(per_condition, split_seed)
}
