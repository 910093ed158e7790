//! Per-condition contiguous 4:1:1 split, per-subset shuffle, and train-only standardization.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::condition::NUM_CLASSES;
use super::window::WindowedSample;
use super::SignalError;
use crate::nn::{Purpose, RngKey};

pub const SPLIT_RATIOS: [usize; 3] = [4, 1, 1];

/// Per-channel mean and population standard deviation of the training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; NUM_CLASSES],
    pub std: [f64; NUM_CLASSES],
}

impl StandardizationStats {
    pub fn fit(samples: &[WindowedSample]) -> Result<Self, SignalError> {
        let mut count = 0usize;
        let mut sum = [0.0; NUM_CLASSES];
        for s in samples {
            for row in s.window.chunks_exact(NUM_CLASSES) {
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(SignalError::InsufficientData("no training windows to standardize".into()));
        }
        let mean = sum.map(|s| s / count as f64);
        let mut sq = [0.0; NUM_CLASSES];
        for s in samples {
            for row in s.window.chunks_exact(NUM_CLASSES) {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq.map(|s| (s / count as f64).sqrt());
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(SignalError::InsufficientData("a channel has zero variance".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, sample: &mut WindowedSample) {
        for row in sample.window.chunks_exact_mut(NUM_CLASSES) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
    pub stats: StandardizationStats,
}

/// Window counts `[train, val, test]` for `n` windows.
///
/// Each subset gets the floor of its 4:1:1 quota; the (at most two) leftover
/// windows go one each to test, then val, so no count strays a full window
/// from its exact quota and training is never inflated.
pub fn split_counts(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_RATIOS.iter().sum();
    let mut counts = SPLIT_RATIOS.map(|r| n * r / total);
    let mut left = n - counts.iter().sum::<usize>();
    for idx in [2, 1, 0] {
        if left == 0 {
            break;
        }
        counts[idx] += 1;
        left -= 1;
    }
    counts
}

/// Splits each condition's windows contiguously in start order, shuffles each
/// subset, then standardizes all three with statistics fitted on train.
pub fn split_dataset(per_condition: Vec<Vec<WindowedSample>>, shuffle_seed: u64) -> Result<DatasetSplit, SignalError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for mut windows in per_condition {
        let Some(first) = windows.first() else {
            return Err(SignalError::InsufficientData("a condition contributed no windows".into()));
        };
        let id = first.condition_id;
        if windows.len() < 6 {
            return Err(SignalError::InsufficientData(format!(
                "condition {id} has {} windows, needs at least 6",
                windows.len()
            )));
        }
        if windows.iter().any(|w| w.condition_id != id) {
            return Err(SignalError::InsufficientData(format!(
                "windows of several conditions grouped under condition {id}"
            )));
        }
        windows.sort_by_key(|w| w.window_start);
        let [n_train, n_val, _] = split_counts(windows.len());
        let rest = windows.split_off(n_train);
        train.extend(windows);
        let mut rest = rest;
        let tail = rest.split_off(n_val);
        val.extend(rest);
        test.extend(tail);
    }

    for (idx, subset) in [&mut train, &mut val, &mut test].into_iter().enumerate() {
        let mut rng = RngKey::new(shuffle_seed, Purpose::Split).stage(idx as u32).stream();
        subset.shuffle(&mut rng);
    }

    let stats = StandardizationStats::fit(&train)?;
    for s in train.iter_mut().chain(val.iter_mut()).chain(test.iter_mut()) {
        stats.apply(s);
    }
    Ok(DatasetSplit { train, val, test, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_condition, window_recording, FaultCondition};
    use std::collections::HashSet;

    #[test]
    fn allocation_rule() {
        assert_eq!(split_counts(6), [4, 1, 1]);
        assert_eq!(split_counts(599), [399, 100, 100]);
        assert_eq!(split_counts(300), [200, 50, 50]);
        assert_eq!(split_counts(7), [4, 1, 2]);
        for n in 6..2000 {
            let c = split_counts(n);
            assert_eq!(c.iter().sum::<usize>(), n);
            for (k, r) in c.iter().zip(SPLIT_RATIOS) {
                let quota = n as f64 * r as f64 / 6.0;
                assert!((*k as f64 - quota).abs() < 1.0, "n={n}: {c:?}");
            }
        }
    }

    fn windows(id: usize, n: usize) -> Vec<WindowedSample> {
        (0..n)
            .map(|k| WindowedSample {
                window: (0..12).map(|j| (k * 12 + j + id) as f64).collect(),
                label: id % 6,
                condition_id: id,
                window_start: k * 10,
                poisoned: false,
            })
            .collect()
    }

    #[test]
    fn split_is_a_contiguous_partition() {
        let split = split_dataset(vec![windows(0, 13), windows(7, 6)], 5).unwrap();
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 19);
        let keys = |v: &[WindowedSample]| v.iter().map(|s| s.key()).collect::<HashSet<_>>();
        let (tr, va, te) = (keys(&split.train), keys(&split.val), keys(&split.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        // temporal order: every train start precedes every val start precedes test
        for id in [0, 7] {
            let max_train = split.train.iter().filter(|s| s.condition_id == id).map(|s| s.window_start).max();
            let min_val = split.val.iter().filter(|s| s.condition_id == id).map(|s| s.window_start).min();
            let max_val = split.val.iter().filter(|s| s.condition_id == id).map(|s| s.window_start).max();
            let min_test = split.test.iter().filter(|s| s.condition_id == id).map(|s| s.window_start).min();
            assert!(max_train < min_val && max_val < min_test);
        }
        let c7 = |v: &[WindowedSample]| v.iter().filter(|s| s.condition_id == 7).count();
        assert_eq!((c7(&split.train), c7(&split.val), c7(&split.test)), (4, 1, 1));
    }

    #[test]
    fn rejects_short_conditions() {
        assert!(split_dataset(vec![windows(0, 5)], 1).is_err());
        assert!(split_dataset(vec![vec![]], 1).is_err());
    }

    #[test]
    fn standardization_is_fitted_on_train() {
        let recs: Vec<_> = [0usize, 20, 30]
            .iter()
            .map(|&id| generate_condition(FaultCondition::from_id(id).unwrap(), id as u64))
            .collect();
        let per: Vec<_> = recs.iter().map(|r| window_recording(r, 50, 50).unwrap()).collect();
        let split = split_dataset(per, 3).unwrap();
        let refit = StandardizationStats::fit(&split.train).unwrap();
        for ch in 0..6 {
            assert!(refit.mean[ch].abs() < 1e-9, "mean {}", refit.mean[ch]);
            assert!((refit.std[ch] - 1.0).abs() < 1e-6, "std {}", refit.std[ch]);
        }
    }

    #[test]
    fn shuffle_depends_on_seed_only() {
        let a = split_dataset(vec![windows(1, 60), windows(2, 60)], 9).unwrap();
        let b = split_dataset(vec![windows(1, 60), windows(2, 60)], 9).unwrap();
        let c = split_dataset(vec![windows(1, 60), windows(2, 60)], 10).unwrap();
        assert_eq!(a, b);
        let order = |s: &DatasetSplit| s.train.iter().map(|w| w.key()).collect::<Vec<_>>();
        assert_ne!(order(&a), order(&c));
    }
}
