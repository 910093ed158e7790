use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::plan::ShardSlicePlan;
use super::store::{CheckpointStore, MemoryStore};
use super::train::{for_each_shard, partition_by_shard, train_from, train_shard, ConstituentModel, ShardJob, ShardRun, ShardTrainReport, TrainConfig};
use super::SisaError;
use crate::signal::{WindowedSample, NUM_CONDITIONS};

/// Conditions to remove from the trained ensemble.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    ids: BTreeSet<usize>,
}

impl UnlearnRequest {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Result<Self, SisaError> {
        let ids: BTreeSet<usize> = ids.into_iter().collect();
        if ids.is_empty() {
            return Err(SisaError::EmptyRequest);
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= NUM_CONDITIONS) {
            return Err(SisaError::UnknownCondition(bad));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &BTreeSet<usize> {
        &self.ids
    }
}

/// Earliest affected slice (1-based) of every shard that holds a removed condition.
pub fn locate_affected(request: &UnlearnRequest, plan: &ShardSlicePlan) -> Result<BTreeMap<usize, usize>, SisaError> {
    let mut out: BTreeMap<usize, usize> = BTreeMap::new();
    for &id in request.ids() {
        let slot = plan.slot(id)?;
        out.entry(slot.shard)
            .and_modify(|r| *r = (*r).min(slot.slice))
            .or_insert(slot.slice);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    /// Shard → first replayed stage.
    pub affected: BTreeMap<usize, usize>,
    /// Shards whose resume checkpoint was missing and were retrained from stage 0.
    pub fallback_shards: Vec<usize>,
    pub shards: Vec<ShardTrainReport>,
    /// (stage, epoch) units executed across all retrained shards.
    pub stage_epochs: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    /// All constituent models; unaffected shards are returned as given.
    pub models: Vec<ConstituentModel>,
    pub report: UnlearnReport,
    /// Checkpoint digests written per retrained shard.
    pub checkpoints: BTreeMap<usize, Vec<(usize, u64)>>,
}

/// Removes `request` from trained models by replaying the affected stages.
///
/// For each affected shard, checkpoint `r* - 1` is loaded from `store` and
/// stages `r*..=R` are rerun without the removed conditions, overwriting their
/// checkpoints. `train` is the full training set the models were built from.
#[allow(clippy::too_many_arguments)]
pub fn unlearn(
    request: &UnlearnRequest,
    models: &[ConstituentModel],
    store: &dyn CheckpointStore,
    train: &[WindowedSample],
    plan: &ShardSlicePlan,
    config: &TrainConfig,
    seed_root: u64,
    workers: usize,
) -> Result<UnlearnOutcome, SisaError> {
    if models.len() != plan.num_shards() || models.iter().enumerate().any(|(i, m)| m.shard != i) {
        return Err(SisaError::DataMismatch(format!(
            "expected one model per shard in order for {} shards",
            plan.num_shards()
        )));
    }
    let affected = locate_affected(request, plan)?;
    for &id in request.ids() {
        let shard = plan.slot(id)?.shard;
        if !models[shard].fingerprint.conditions.contains(&id) {
            return Err(SisaError::NotPresent(id));
        }
    }

    let parts = partition_by_shard(train, plan)?;
    let excluded: BTreeMap<usize, BTreeSet<usize>> = affected
        .keys()
        .map(|&shard| {
            let retained: BTreeSet<usize> = models[shard].fingerprint.conditions.iter().copied().collect();
            let mut ex: BTreeSet<usize> = plan.shard_conditions(shard).into_iter().filter(|id| !retained.contains(id)).collect();
            ex.extend(request.ids().iter().copied().filter(|&id| plan.slot(id).is_ok_and(|s| s.shard == shard)));
            (shard, ex)
        })
        .collect();

    let clock = Instant::now();
    let shards: Vec<usize> = affected.keys().copied().collect();
    let runs = for_each_shard(&shards, workers, |shard| {
        let job = ShardJob {
            shard,
            plan,
            config,
            seed_root,
            samples: &parts[shard],
            excluded: &excluded[&shard],
        };
        let resume = affected[&shard] - 1;
        match store.load(shard, resume)? {
            Some(ck) => train_from(&job, ck, store).map(|r| (r, false)),
            None => train_shard(&job, store).map(|r| (r, true)),
        }
    })?;
    let seconds = clock.elapsed().as_secs_f64();

    let mut out = models.to_vec();
    let mut report = UnlearnReport {
        affected,
        fallback_shards: Vec::new(),
        shards: Vec::new(),
        stage_epochs: 0,
        seconds,
    };
    let mut checkpoints = BTreeMap::new();
    for (run, fallback) in runs {
        let shard = run.model.shard;
        if fallback {
            report.fallback_shards.push(shard);
        }
        report.stage_epochs += run.report.stage_epochs;
        report.shards.push(run.report);
        checkpoints.insert(shard, run.checkpoints);
        out[shard] = run.model;
    }
    Ok(UnlearnOutcome {
        models: out,
        report,
        checkpoints,
    })
}

/// Retrains one shard from scratch without `excluded`, using the same key schedule.
///
/// `train` may be the full training set; only the shard's windows are used.
pub fn oracle_retrain(
    shard: usize,
    train: &[WindowedSample],
    plan: &ShardSlicePlan,
    config: &TrainConfig,
    seed_root: u64,
    excluded: &BTreeSet<usize>,
) -> Result<ShardRun, SisaError> {
    let mut parts = partition_by_shard(train, plan)?;
    if shard >= parts.len() {
        return Err(SisaError::DataMismatch(format!("no shard {shard}")));
    }
    let samples = std::mem::take(&mut parts[shard]);
    let job = ShardJob {
        shard,
        plan,
        config,
        seed_root,
        samples: &samples,
        excluded,
    };
    train_shard(&job, &MemoryStore::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::FaultCondition;
    use crate::sisa::train::tests::{toy_config, toy_samples};
    use crate::sisa::{plan_shards, train_all, ShardStrategy};

    fn plan(s: usize) -> ShardSlicePlan {
        plan_shards(&FaultCondition::all(), s, None, ShardStrategy::SeverityGrouped).unwrap()
    }

    #[test]
    fn request_validation() {
        assert!(matches!(UnlearnRequest::new([]), Err(SisaError::EmptyRequest)));
        assert!(matches!(UnlearnRequest::new([3, 48]), Err(SisaError::UnknownCondition(48))));
        assert_eq!(UnlearnRequest::new([5, 5, 2]).unwrap().ids().len(), 2);
    }

    #[test]
    fn earliest_slice_per_shard() {
        let p = plan(2);
        let s3 = p.slice_conditions(0, 3)[0];
        let s2 = p.slice_conditions(0, 2)[4];
        let r = locate_affected(&UnlearnRequest::new([s3, s2]).unwrap(), &p).unwrap();
        assert_eq!(r, BTreeMap::from([(0, 2)]));
        let one = p.slice_conditions(1, 1)[3];
        let r = locate_affected(&UnlearnRequest::new([one]).unwrap(), &p).unwrap();
        assert_eq!(r, BTreeMap::from([(1, 1)]));
    }

    fn exactness_case(s: usize, remove: Vec<usize>) {
        let p = plan(s);
        let cfg = toy_config();
        let data = toy_samples(4, 2);
        let store = MemoryStore::new();
        let seed = 77;
        let trained = train_all(&p, &cfg, seed, &data, &BTreeSet::new(), &store, 1).unwrap();
        let before = store.digests();
        let req = UnlearnRequest::new(remove.clone()).unwrap();
        let out = unlearn(&req, &trained.models, &store, &data, &p, &cfg, seed, 1).unwrap();
        assert!(out.report.fallback_shards.is_empty());
        let affected = locate_affected(&req, &p).unwrap();
        for shard in 0..s {
            match affected.get(&shard) {
                None => assert_eq!(out.models[shard], trained.models[shard]),
                Some(&r) => {
                    let ex: BTreeSet<usize> = remove.iter().copied().filter(|&id| p.slot(id).unwrap().shard == shard).collect();
                    let oracle = oracle_retrain(shard, &data, &p, &cfg, seed, &ex).unwrap();
                    assert_eq!(out.models[shard], oracle.model, "shard {shard}");
                    // checkpoints before r* were untouched and match the oracle's
                    for &(stage, digest) in &oracle.checkpoints {
                        if stage < r {
                            assert_eq!(before[&(shard, stage)], digest);
                        } else {
                            assert_eq!(store.digests()[&(shard, stage)], digest);
                        }
                    }
                    assert_eq!(out.report.shards.iter().find(|x| x.shard == shard).unwrap().first_stage, r);
                }
            }
        }
    }

    #[test]
    fn unlearn_matches_oracle_in_first_slice() {
        let p = plan(2);
        exactness_case(2, vec![p.slice_conditions(1, 1)[3]]);
    }

    #[test]
    fn unlearn_matches_oracle_in_later_slice() {
        let p = plan(2);
        exactness_case(2, vec![p.slice_conditions(0, 3)[1]]);
        exactness_case(4, vec![p.slice_conditions(1, 4)[0]]);
    }

    #[test]
    fn unlearn_across_shards() {
        let p = plan(2);
        exactness_case(2, vec![p.slice_conditions(0, 1)[0], p.slice_conditions(1, 2)[5], p.slice_conditions(1, 1)[2]]);
    }

    #[test]
    fn no_removal_oracle_equals_training() {
        let p = plan(4);
        let cfg = toy_config();
        let data = toy_samples(4, 2);
        let trained = train_all(&p, &cfg, 3, &data, &BTreeSet::new(), &MemoryStore::new(), 1).unwrap();
        let o = oracle_retrain(2, &data, &p, &cfg, 3, &BTreeSet::new()).unwrap();
        assert_eq!(o.model, trained.models[2]);
    }

    #[test]
    fn work_is_the_replayed_stages() {
        let p = plan(2);
        let mut cfg = toy_config();
        cfg.epochs_total = 8;
        let data = toy_samples(4, 1);
        let store = MemoryStore::new();
        let trained = train_all(&p, &cfg, 1, &data, &BTreeSet::new(), &store, 1).unwrap();
        let full: usize = trained.reports.iter().map(|r| r.stage_epochs).sum();
        assert_eq!(full, 16);
        let req = UnlearnRequest::new([p.slice_conditions(0, 4)[0]]).unwrap();
        let out = unlearn(&req, &trained.models, &store.clone(), &data, &p, &cfg, 1, 1).unwrap();
        assert_eq!(out.report.stage_epochs, 2);
        let req = UnlearnRequest::new([p.slice_conditions(0, 1)[0]]).unwrap();
        let out = unlearn(&req, &trained.models, &store.clone(), &data, &p, &cfg, 1, 1).unwrap();
        assert_eq!(out.report.stage_epochs * 2, full);
    }

    #[test]
    fn missing_checkpoint_falls_back_to_full_retrain() {
        let p = plan(2);
        let cfg = toy_config();
        let data = toy_samples(4, 1);
        let store = MemoryStore::new();
        let trained = train_all(&p, &cfg, 9, &data, &BTreeSet::new(), &store, 1).unwrap();
        let id = p.slice_conditions(1, 3)[0];
        assert!(store.remove(1, 2));
        let req = UnlearnRequest::new([id]).unwrap();
        let out = unlearn(&req, &trained.models, &store, &data, &p, &cfg, 9, 1).unwrap();
        assert_eq!(out.report.fallback_shards, vec![1]);
        let oracle = oracle_retrain(1, &data, &p, &cfg, 9, &BTreeSet::from([id])).unwrap();
        assert_eq!(out.models[1], oracle.model);
    }

    #[test]
    fn repeated_removal_is_rejected_and_sequential_removal_is_exact() {
        let p = plan(2);
        let cfg = toy_config();
        let data = toy_samples(4, 1);
        let store = MemoryStore::new();
        let trained = train_all(&p, &cfg, 4, &data, &BTreeSet::new(), &store, 1).unwrap();
        let a = p.slice_conditions(0, 3)[2];
        let b = p.slice_conditions(0, 2)[1];
        let first = unlearn(&UnlearnRequest::new([a]).unwrap(), &trained.models, &store, &data, &p, &cfg, 4, 1).unwrap();
        assert!(matches!(
            unlearn(&UnlearnRequest::new([a]).unwrap(), &first.models, &store, &data, &p, &cfg, 4, 1),
            Err(SisaError::NotPresent(_))
        ));
        let second = unlearn(&UnlearnRequest::new([b]).unwrap(), &first.models, &store, &data, &p, &cfg, 4, 1).unwrap();
        let oracle = oracle_retrain(0, &data, &p, &cfg, 4, &BTreeSet::from([a, b])).unwrap();
        assert_eq!(second.models[0], oracle.model);
    }
}
