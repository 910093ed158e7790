use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SisaError;
use crate::signal::{FaultCondition, NUM_CLASSES, NUM_CONDITIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardStrategy {
    /// Contiguous severity blocks per shard.
    SeverityGrouped,
    /// Each shard receives every `S`-th severity of each label.
    Uniform,
}

impl ShardStrategy {
    pub fn parse(s: &str) -> Result<Self, SisaError> {
        match s {
            "severity_grouped" => Ok(Self::SeverityGrouped),
            "uniform" => Ok(Self::Uniform),
            other => Err(SisaError::Plan(format!("unknown shard strategy {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SeverityGrouped => "severity_grouped",
            Self::Uniform => "uniform",
        }
    }
}

/// Where a condition lives. `slice` is 1-based: slice `k` first enters training at stage `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub shard: usize,
    pub slice: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardSlicePlan {
    num_shards: usize,
    slices_per_shard: usize,
    strategy: ShardStrategy,
    /// Indexed by condition id.
    assignment: Vec<Slot>,
}

/// Default slice count: one condition per label per slice.
pub fn default_slices(num_shards: usize) -> Option<usize> {
    let per_shard = NUM_CONDITIONS.checked_div(num_shards)?;
    (num_shards > 0 && NUM_CONDITIONS % num_shards == 0 && per_shard % NUM_CLASSES == 0 && per_shard >= NUM_CLASSES)
        .then_some(per_shard / NUM_CLASSES)
}

/// Assigns the 48 conditions to `num_shards` shards of `slices` slices each.
///
/// `slices = None` picks one condition per label per slice. An explicit count
/// must divide the per-label share of a shard so every slice stays label balanced.
pub fn plan_shards(
    conditions: &[FaultCondition],
    num_shards: usize,
    slices: Option<usize>,
    strategy: ShardStrategy,
) -> Result<ShardSlicePlan, SisaError> {
    if conditions.len() != NUM_CONDITIONS || conditions.iter().map(|c| c.id()).collect::<BTreeSet<_>>().len() != NUM_CONDITIONS {
        return Err(SisaError::Plan(format!("expected the {NUM_CONDITIONS} distinct conditions")));
    }
    if num_shards == 0 || NUM_CONDITIONS % num_shards != 0 {
        return Err(SisaError::Plan(format!("{num_shards} shards do not divide {NUM_CONDITIONS} conditions")));
    }
    let per_label = default_slices(num_shards).ok_or_else(|| {
        SisaError::Plan(format!(
            "{num_shards} shards cannot hold whole label-balanced slices ({} conditions each)",
            NUM_CONDITIONS / num_shards
        ))
    })?;
    let r = slices.unwrap_or(per_label);
    if r == 0 || per_label % r != 0 {
        return Err(SisaError::Plan(format!(
            "{r} slices per shard cannot balance {per_label} conditions per label"
        )));
    }
    let per_slice_label = per_label / r;

    let mut ordered: Vec<FaultCondition> = conditions.to_vec();
    ordered.sort_by_key(|c| (c.severity, c.label()));

    // shard membership
    let mut shard_of = vec![0usize; NUM_CONDITIONS];
    match strategy {
        ShardStrategy::SeverityGrouped => {
            let block = NUM_CONDITIONS / num_shards;
            for (pos, c) in ordered.iter().enumerate() {
                shard_of[c.id()] = pos / block;
            }
        }
        ShardStrategy::Uniform => {
            let mut seen = [0usize; NUM_CLASSES];
            for c in &ordered {
                shard_of[c.id()] = seen[c.label()] % num_shards;
                seen[c.label()] += 1;
            }
        }
    }

    // slices: k-th condition of each label (severity order) within a shard
    let mut assignment = vec![Slot { shard: 0, slice: 0 }; NUM_CONDITIONS];
    let mut seen = vec![[0usize; NUM_CLASSES]; num_shards];
    for c in &ordered {
        let shard = shard_of[c.id()];
        let k = seen[shard][c.label()];
        seen[shard][c.label()] += 1;
        assignment[c.id()] = Slot {
            shard,
            slice: k / per_slice_label + 1,
        };
    }

    Ok(ShardSlicePlan {
        num_shards,
        slices_per_shard: r,
        strategy,
        assignment,
    })
}

impl ShardSlicePlan {
    pub fn num_shards(&self) -> usize {
        self.num_shards
    }

    pub fn slices_per_shard(&self) -> usize {
        self.slices_per_shard
    }

    pub fn strategy(&self) -> ShardStrategy {
        self.strategy
    }

    pub fn slot(&self, condition_id: usize) -> Result<Slot, SisaError> {
        self.assignment
            .get(condition_id)
            .copied()
            .ok_or(SisaError::UnknownCondition(condition_id))
    }

    /// Condition ids in `slice` (1-based) of `shard`, ascending.
    pub fn slice_conditions(&self, shard: usize, slice: usize) -> Vec<usize> {
        (0..NUM_CONDITIONS)
            .filter(|&id| self.assignment[id] == Slot { shard, slice })
            .collect()
    }

    pub fn shard_conditions(&self, shard: usize) -> Vec<usize> {
        (0..NUM_CONDITIONS).filter(|&id| self.assignment[id].shard == shard).collect()
    }

    /// Conditions of slices `1..=stage` of `shard`, ascending.
    pub fn stage_conditions(&self, shard: usize, stage: usize) -> Vec<usize> {
        (0..NUM_CONDITIONS)
            .filter(|&id| {
                let s = self.assignment[id];
                s.shard == shard && s.slice <= stage
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<FaultCondition> {
        FaultCondition::all()
    }

    fn assert_balanced(plan: &ShardSlicePlan) {
        for shard in 0..plan.num_shards() {
            for slice in 1..=plan.slices_per_shard() {
                let ids = plan.slice_conditions(shard, slice);
                let per = NUM_CONDITIONS / plan.num_shards() / plan.slices_per_shard() / NUM_CLASSES;
                let mut counts = [0; NUM_CLASSES];
                for id in ids {
                    counts[FaultCondition::from_id(id).unwrap().label()] += 1;
                }
                assert_eq!(counts, [per; NUM_CLASSES], "shard {shard} slice {slice}");
            }
        }
    }

    #[test]
    fn two_shards_four_slices() {
        let plan = plan_shards(&all(), 2, None, ShardStrategy::SeverityGrouped).unwrap();
        assert_eq!(plan.slices_per_shard(), 4);
        for shard in 0..2 {
            assert_eq!(plan.shard_conditions(shard).len(), 24);
        }
        assert_balanced(&plan);
    }

    #[test]
    fn one_shard_is_plain_training() {
        let plan = plan_shards(&all(), 1, None, ShardStrategy::SeverityGrouped).unwrap();
        assert_eq!(plan.slices_per_shard(), 8);
        assert_eq!(plan.shard_conditions(0).len(), 48);
        assert_balanced(&plan);
    }

    #[test]
    fn four_severity_grouped_shards() {
        let plan = plan_shards(&all(), 4, None, ShardStrategy::SeverityGrouped).unwrap();
        assert_eq!(plan.slices_per_shard(), 2);
        let sevs = |shard| {
            plan.shard_conditions(shard)
                .into_iter()
                .map(|id| FaultCondition::from_id(id).unwrap().severity)
                .collect::<BTreeSet<_>>()
        };
        assert_eq!(sevs(0), BTreeSet::from([1, 2]));
        assert_eq!(sevs(3), BTreeSet::from([7, 8]));
        for a in 0..4 {
            assert_eq!(plan.shard_conditions(a).len(), 12);
            for b in a + 1..4 {
                assert!(sevs(a).is_disjoint(&sevs(b)));
            }
        }
        // slice 1 of shard 0 is severity 1 of every label
        let s1: Vec<u8> = plan
            .slice_conditions(0, 1)
            .into_iter()
            .map(|id| FaultCondition::from_id(id).unwrap().severity)
            .collect();
        assert_eq!(s1, vec![1; 6]);
        assert_balanced(&plan);
    }

    #[test]
    fn uniform_spreads_severities() {
        let plan = plan_shards(&all(), 2, None, ShardStrategy::Uniform).unwrap();
        assert_balanced(&plan);
        let sevs: BTreeSet<u8> = plan
            .shard_conditions(0)
            .into_iter()
            .map(|id| FaultCondition::from_id(id).unwrap().severity)
            .collect();
        assert_eq!(sevs, BTreeSet::from([1, 3, 5, 7]));
    }

    #[test]
    fn explicit_slice_counts() {
        let plan = plan_shards(&all(), 1, Some(1), ShardStrategy::SeverityGrouped).unwrap();
        assert_eq!(plan.slice_conditions(0, 1).len(), 48);
        let plan = plan_shards(&all(), 2, Some(2), ShardStrategy::SeverityGrouped).unwrap();
        assert_balanced(&plan);
        assert!(plan_shards(&all(), 2, Some(3), ShardStrategy::SeverityGrouped).is_err());
        assert!(plan_shards(&all(), 2, Some(0), ShardStrategy::SeverityGrouped).is_err());
    }

    #[test]
    fn rejects_unbalanceable_shard_counts() {
        for s in [0, 3, 5, 6, 7, 16, 48] {
            assert!(plan_shards(&all(), s, None, ShardStrategy::SeverityGrouped).is_err(), "S={s}");
        }
        assert!(plan_shards(&all(), 8, None, ShardStrategy::SeverityGrouped).is_ok());
        assert!(plan_shards(&all()[..47], 2, None, ShardStrategy::SeverityGrouped).is_err());
    }

    #[test]
    fn stage_conditions_are_cumulative() {
        let plan = plan_shards(&all(), 2, None, ShardStrategy::SeverityGrouped).unwrap();
        for r in 1..=4 {
            assert_eq!(plan.stage_conditions(1, r).len(), 6 * r);
        }
        assert!(plan.slot(48).is_err());
    }
}
