use std::collections::BTreeSet;

use super::config::{EmiSettings, ExperimentConfig};
use super::ExperimentError;
use crate::signal::{apply_emi, build_dataset, condition_seed, generate_all, DatasetSplit, FaultCondition, Recording, WindowedSample};

/// Recordings, their windowed split, and the poisoned set.
///
/// Standardization is fitted once on the full (poisoned) training split and
/// reused after removal, so dropping conditions never changes the remaining
/// windows' values.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub recordings: Vec<Recording>,
    pub split: DatasetSplit,
    pub poisoned: BTreeSet<usize>,
}

/// Applies EMI to each listed condition, seeded per condition from `emi_seed`.
pub fn poison_recordings(
    recordings: &mut [Recording],
    ids: &[usize],
    emi: &EmiSettings,
    emi_seed: u64,
) -> Result<(), ExperimentError> {
    for &id in ids {
        let rec = recordings
            .iter_mut()
            .find(|r| r.condition.id() == id)
            .ok_or_else(|| ExperimentError::Config(format!("no recording for condition {id}")))?;
        let cond = FaultCondition::from_id(id)?;
        *rec = apply_emi(rec, &emi.spec_for(&cond, condition_seed(emi_seed, id)))?;
    }
    Ok(())
}

impl PreparedData {
    /// Synthesizes, poisons, windows and splits according to `config`.
    pub fn generate(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let mut recordings = generate_all(config.synth_seed);
        poison_recordings(&mut recordings, &config.poisoned, &config.emi, config.emi_seed)?;
        Self::from_recordings(recordings, config)
    }

    /// Windows and splits recordings that were already generated (and possibly poisoned).
    pub fn from_recordings(recordings: Vec<Recording>, config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let split = build_dataset(&recordings, config.window_len, config.stride, config.split_seed)?;
        let poisoned = recordings.iter().filter(|r| r.poisoned).map(|r| r.condition.id()).collect();
        Ok(Self {
            recordings,
            split,
            poisoned,
        })
    }

    /// Test windows; `clean` drops every poisoned condition.
    pub fn test_set(&self, clean: bool) -> Vec<&WindowedSample> {
        self.split
            .test
            .iter()
            .filter(|s| !(clean && self.poisoned.contains(&s.condition_id)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisoned_windows_are_flagged_and_removable() {
        let mut cfg = ExperimentConfig::desk();
        cfg.stride = 50;
        let data = PreparedData::generate(&cfg).unwrap();
        assert_eq!(data.poisoned, BTreeSet::from([24]));
        assert!(data.split.train.iter().filter(|s| s.condition_id == 24).all(|s| s.poisoned));
        assert!(data.split.train.iter().filter(|s| s.condition_id != 24).all(|s| !s.poisoned));
        let full = data.test_set(false).len();
        let clean = data.test_set(true).len();
        assert_eq!(full - clean, 50);
        // the counterpart channel is the one corrupted, from the onset on
        let clean_rec = generate_all(cfg.synth_seed);
        let (dirty, clean) = (&data.recordings[24].channels[0], &clean_rec[24].channels[0]);
        assert_eq!(dirty[..8000], clean[..8000]);
        assert_eq!(dirty[12_000], 1.4 * clean[12_000]);
        assert_eq!(data.recordings[24].channels[3], clean_rec[24].channels[3]);
    }
}
