use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngCursor};
use super::plan::ShardSlicePlan;
use super::store::CheckpointStore;
use super::SisaError;
use crate::fnv::Fnv64;
use crate::nn::{
    adam_step, backward, forward, softmax_cross_entropy, AdamConfig, AdamState, Mode, ModelConfig, ModelParams, Purpose,
    RngKey,
};
use crate::signal::WindowedSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    /// Epochs summed over all stages of a shard.
    pub epochs_total: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            epochs_total: 60,
            batch_size: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SisaError> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(SisaError::Config("batch_size must be positive".into()));
        }
        if self.epochs_total == 0 {
            return Err(SisaError::Config("epochs_total must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(SisaError::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Epochs per stage: `ceil(E/R)` each, the tail trimmed so the total stays `E`.
pub fn stage_epochs(epochs_total: usize, stages: usize) -> Vec<usize> {
    if stages == 0 {
        return Vec::new();
    }
    let per = epochs_total.div_ceil(stages);
    let mut left = epochs_total;
    (0..stages)
        .map(|_| {
            let e = per.min(left);
            left -= e;
            e
        })
        .collect()
}

/// Identity of the data a model was last trained on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFingerprint {
    /// Retained condition ids, ascending.
    pub conditions: Vec<usize>,
    /// FNV-1a over the sorted `(condition_id, window_start)` keys of every window used.
    pub window_hash: u64,
}

impl DataFingerprint {
    fn of(sorted: &[&WindowedSample]) -> Self {
        let mut h = Fnv64::new();
        let mut conditions = BTreeSet::new();
        for s in sorted {
            h.write(&(s.condition_id as u64).to_le_bytes());
            h.write(&(s.window_start as u64).to_le_bytes());
            conditions.insert(s.condition_id);
        }
        Self {
            conditions: conditions.into_iter().collect(),
            window_hash: h.finish(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstituentModel {
    pub shard: usize,
    pub params: ModelParams,
    pub fingerprint: DataFingerprint,
}

/// One shard's training inputs.
#[derive(Clone, Copy, Debug)]
pub struct ShardJob<'a> {
    pub shard: usize,
    pub plan: &'a ShardSlicePlan,
    pub config: &'a TrainConfig,
    pub seed_root: u64,
    /// Training windows of this shard only.
    pub samples: &'a [WindowedSample],
    /// Condition ids left out of every stage.
    pub excluded: &'a BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardTrainReport {
    pub shard: usize,
    /// First stage executed (1-based).
    pub first_stage: usize,
    pub stages_run: usize,
    /// (stage, epoch) units executed.
    pub stage_epochs: usize,
    pub batches: usize,
    pub samples_seen: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ShardRun {
    pub model: ConstituentModel,
    /// `(stage, digest)` of every checkpoint this run wrote.
    pub checkpoints: Vec<(usize, u64)>,
    pub report: ShardTrainReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub models: Vec<ConstituentModel>,
    pub reports: Vec<ShardTrainReport>,
    pub seconds: f64,
}

impl ShardJob<'_> {
    fn validate(&self) -> Result<(), SisaError> {
        self.config.validate()?;
        if self.shard >= self.plan.num_shards() {
            return Err(SisaError::DataMismatch(format!(
                "shard {} outside a {}-shard plan",
                self.shard,
                self.plan.num_shards()
            )));
        }
        let m = &self.config.model;
        for s in self.samples {
            let slot = self.plan.slot(s.condition_id)?;
            if slot.shard != self.shard {
                return Err(SisaError::DataMismatch(format!(
                    "condition {} belongs to shard {}, not {}",
                    s.condition_id, slot.shard, self.shard
                )));
            }
            if s.window.len() != m.window_len * m.input_dim {
                return Err(SisaError::DataMismatch(format!(
                    "window of condition {} has {} values, model expects {}×{}",
                    s.condition_id,
                    s.window.len(),
                    m.window_len,
                    m.input_dim
                )));
            }
            if s.label >= m.num_classes {
                return Err(SisaError::DataMismatch(format!("label {} out of range", s.label)));
            }
        }
        Ok(())
    }

    /// Retained windows of slices `1..=stage`, sorted by key.
    fn stage_members(&self, stage: usize) -> Vec<&WindowedSample> {
        let mut v: Vec<&WindowedSample> = self
            .samples
            .iter()
            .filter(|s| !self.excluded.contains(&s.condition_id))
            .filter(|s| self.plan.slot(s.condition_id).is_ok_and(|slot| slot.slice <= stage))
            .collect();
        v.sort_by_key(|s| s.key());
        v
    }

    fn initial_checkpoint(&self) -> Result<Checkpoint, SisaError> {
        let params = ModelParams::init(&self.config.model, RngKey::new(self.seed_root, Purpose::Init).shard(self.shard as u32))?;
        let adam = AdamState::new(&params);
        Ok(Checkpoint {
            shard: self.shard as u16,
            stage: 0,
            params,
            adam,
            cursor: RngCursor {
                seed_root: self.seed_root,
                shard: self.shard as u64,
                stage: 0,
                epochs_done: 0,
            },
        })
    }

    fn check_resume(&self, start: &Checkpoint, schedule: &[usize]) -> Result<(), SisaError> {
        let stage = start.stage as usize;
        let expected = RngCursor {
            seed_root: self.seed_root,
            shard: self.shard as u64,
            stage: stage as u64,
            epochs_done: schedule[..stage.min(schedule.len())].iter().sum::<usize>() as u64,
        };
        if start.shard as usize != self.shard || stage > schedule.len() || start.cursor != expected {
            return Err(SisaError::Checkpoint(format!(
                "checkpoint (shard {}, stage {}, cursor {:?}) does not continue this schedule (expected {expected:?})",
                start.shard, start.stage, start.cursor
            )));
        }
        if !start.params.same_shape(&ModelParams::zeros(&self.config.model)) {
            return Err(SisaError::Checkpoint("checkpoint parameters do not match the model config".into()));
        }
        Ok(())
    }
}

struct StageWork {
    batches: usize,
    samples: usize,
}

fn run_stage(
    job: &ShardJob<'_>,
    stage: usize,
    epochs: usize,
    params: &mut ModelParams,
    adam: &mut AdamState,
) -> Result<StageWork, SisaError> {
    let members = job.stage_members(stage);
    let cfg = job.config;
    let m = &cfg.model;
    let width = m.window_len * m.input_dim;
    let mut work = StageWork { batches: 0, samples: 0 };
    let mut inputs = Vec::with_capacity(cfg.batch_size * width);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let key = RngKey::new(job.seed_root, Purpose::Shuffle).shard(job.shard as u32).stage(stage as u32);
    for epoch in 0..epochs {
        if members.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.shuffle(&mut key.epoch(epoch as u32).stream());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            inputs.clear();
            labels.clear();
            for &i in chunk {
                inputs.extend_from_slice(&members[i].window);
                labels.push(members[i].label);
            }
            let mut rng = RngKey::new(job.seed_root, Purpose::Dropout)
                .shard(job.shard as u32)
                .stage(stage as u32)
                .epoch(epoch as u32)
                .batch(b as u32)
                .stream();
            let (logits, cache) = forward(params, m, &inputs, chunk.len(), Mode::Train(&mut rng))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels, m.num_classes)?;
            if !loss.is_finite() {
                return Err(SisaError::Diverged {
                    shard: job.shard,
                    stage,
                    epoch,
                    detail: format!("loss {loss} at batch {b}"),
                });
            }
            let grads = backward(params, &cache, &dlogits)?;
            adam_step(params, &grads, adam, &cfg.adam)?;
            work.batches += 1;
            work.samples += chunk.len();
        }
        if !params.is_finite() {
            return Err(SisaError::Diverged {
                shard: job.shard,
                stage,
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
    }
    Ok(work)
}

/// Runs stages `start.stage + 1 ..= R` from `start`, saving a checkpoint after each.
pub(crate) fn train_from(job: &ShardJob<'_>, start: Checkpoint, store: &dyn CheckpointStore) -> Result<ShardRun, SisaError> {
    job.validate()?;
    let schedule = stage_epochs(job.config.epochs_total, job.plan.slices_per_shard());
    job.check_resume(&start, &schedule)?;
    let clock = Instant::now();
    let first_stage = start.stage as usize + 1;
    let mut epochs_done = start.cursor.epochs_done;
    let Checkpoint {
        mut params, mut adam, ..
    } = start;
    let mut report = ShardTrainReport {
        shard: job.shard,
        first_stage,
        stages_run: 0,
        stage_epochs: 0,
        batches: 0,
        samples_seen: 0,
        seconds: 0.0,
    };
    let mut written = Vec::new();
    for stage in first_stage..=schedule.len() {
        let epochs = schedule[stage - 1];
        let work = run_stage(job, stage, epochs, &mut params, &mut adam)?;
        epochs_done += epochs as u64;
        report.stages_run += 1;
        report.stage_epochs += epochs;
        report.batches += work.batches;
        report.samples_seen += work.samples;
        let ck = Checkpoint {
            shard: job.shard as u16,
            stage: stage as u16,
            params,
            adam,
            cursor: RngCursor {
                seed_root: job.seed_root,
                shard: job.shard as u64,
                stage: stage as u64,
                epochs_done,
            },
        };
        store.save(&ck)?;
        written.push((stage, ck.digest()));
        params = ck.params;
        adam = ck.adam;
    }
    report.seconds = clock.elapsed().as_secs_f64();
    let fingerprint = DataFingerprint::of(&job.stage_members(schedule.len()));
    Ok(ShardRun {
        model: ConstituentModel {
            shard: job.shard,
            params,
            fingerprint,
        },
        checkpoints: written,
        report,
    })
}

/// Trains one shard through every stage from a fresh initialization.
///
/// Checkpoints 0..=R are written to `store`.
pub fn train_shard(job: &ShardJob<'_>, store: &dyn CheckpointStore) -> Result<ShardRun, SisaError> {
    job.validate()?;
    let clock = Instant::now();
    let init = job.initial_checkpoint()?;
    store.save(&init)?;
    let digest = init.digest();
    let mut run = train_from(job, init, store)?;
    run.checkpoints.insert(0, (0, digest));
    run.report.first_stage = 1;
    run.report.seconds = clock.elapsed().as_secs_f64();
    Ok(run)
}

/// Splits training windows by shard. Fails on conditions unknown to the plan.
pub fn partition_by_shard(samples: &[WindowedSample], plan: &ShardSlicePlan) -> Result<Vec<Vec<WindowedSample>>, SisaError> {
    let mut out = vec![Vec::new(); plan.num_shards()];
    for s in samples {
        out[plan.slot(s.condition_id)?.shard].push(s.clone());
    }
    Ok(out)
}

/// Runs `f(shard)` for every shard on up to `workers` threads; results come back in shard order.
pub(crate) fn for_each_shard<T: Send>(
    shards: &[usize],
    workers: usize,
    f: impl Fn(usize) -> Result<T, SisaError> + Sync,
) -> Result<Vec<T>, SisaError> {
    let workers = workers.clamp(1, shards.len().max(1));
    if workers == 1 {
        return shards.iter().map(|&s| f(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T, SisaError>>>> = Mutex::new((0..shards.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= shards.len() {
                    break;
                }
                let r = f(shards[i]);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every shard ran"))
        .collect()
}

/// Trains every shard of `plan` on `train`, leaving out `excluded` conditions.
pub fn train_all(
    plan: &ShardSlicePlan,
    config: &TrainConfig,
    seed_root: u64,
    train: &[WindowedSample],
    excluded: &BTreeSet<usize>,
    store: &dyn CheckpointStore,
    workers: usize,
) -> Result<TrainOutcome, SisaError> {
    let parts = partition_by_shard(train, plan)?;
    let clock = Instant::now();
    let shards: Vec<usize> = (0..plan.num_shards()).collect();
    let runs = for_each_shard(&shards, workers, |shard| {
        let job = ShardJob {
            shard,
            plan,
            config,
            seed_root,
            samples: &parts[shard],
            excluded,
        };
        train_shard(&job, store)
    })?;
    let seconds = clock.elapsed().as_secs_f64();
    let (models, reports) = runs.into_iter().map(|r| (r.model, r.report)).unzip();
    Ok(TrainOutcome { models, reports, seconds })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::signal::FaultCondition;
    use crate::sisa::{plan_shards, MemoryStore, ShardStrategy};

    #[test]
    fn epoch_schedule() {
        assert_eq!(stage_epochs(60, 4), vec![15; 4]);
        assert_eq!(stage_epochs(60, 8), vec![8, 8, 8, 8, 8, 8, 8, 4]);
        assert_eq!(stage_epochs(12, 4), vec![3; 4]);
        assert_eq!(stage_epochs(12, 8), vec![2, 2, 2, 2, 2, 2, 0, 0]);
        assert_eq!(stage_epochs(7, 1), vec![7]);
        for e in 1..100 {
            for r in 1..10 {
                assert_eq!(stage_epochs(e, r).iter().sum::<usize>(), e);
            }
        }
    }

    /// Small deterministic windows: a per-label sinusoid plus condition-dependent offset.
    pub(crate) fn toy_samples(window_len: usize, per_condition: usize) -> Vec<WindowedSample> {
        let mut out = Vec::new();
        for c in FaultCondition::all() {
            for k in 0..per_condition {
                let window = (0..window_len * 6)
                    .map(|j| {
                        let (t, ch) = (j / 6, j % 6);
                        let on = if ch == c.label() { 1.0 } else { 0.2 };
                        on * ((t + k) as f64 * 0.7 + ch as f64).sin() + 0.05 * c.severity as f64
                    })
                    .collect();
                out.push(WindowedSample {
                    window,
                    label: c.label(),
                    condition_id: c.id(),
                    window_start: k * window_len,
                    poisoned: false,
                });
            }
        }
        out
    }

    pub(crate) fn toy_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                lstm1_hidden: 6,
                lstm2_hidden: 4,
                fc_hidden: 5,
                window_len: 4,
                dropout_rate: 0.3,
                ..ModelConfig::default()
            },
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            epochs_total: 4,
            batch_size: 7,
        }
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_every_stage() {
        let plan = plan_shards(&FaultCondition::all(), 2, None, ShardStrategy::SeverityGrouped).unwrap();
        let cfg = toy_config();
        let data = toy_samples(4, 3);
        let a = MemoryStore::new();
        let b = MemoryStore::new();
        let none = BTreeSet::new();
        let ra = train_all(&plan, &cfg, 11, &data, &none, &a, 1).unwrap();
        let rb = train_all(&plan, &cfg, 11, &data, &none, &b, 2).unwrap();
        assert_eq!(ra.models, rb.models);
        assert_eq!(a.digests(), b.digests());
        assert_eq!(a.len(), 2 * 5);
        for shard in 0..2 {
            for stage in 0..=4 {
                let ck = a.load(shard, stage).unwrap().unwrap();
                assert_eq!(ck.cursor.epochs_done, stage as u64);
            }
        }
        assert_eq!(ra.reports[0].stage_epochs, 4);
        assert_eq!(ra.models[1].fingerprint.conditions, plan.shard_conditions(1));
        let other = train_all(&plan, &cfg, 12, &data, &none, &MemoryStore::new(), 1).unwrap();
        assert_ne!(other.models[0].params, ra.models[0].params);
    }

    #[test]
    fn rejects_foreign_data() {
        let plan = plan_shards(&FaultCondition::all(), 2, None, ShardStrategy::SeverityGrouped).unwrap();
        let cfg = toy_config();
        let data = toy_samples(4, 1);
        let none = BTreeSet::new();
        let job = ShardJob {
            shard: 0,
            plan: &plan,
            config: &cfg,
            seed_root: 1,
            samples: &data,
            excluded: &none,
        };
        assert!(matches!(train_shard(&job, &MemoryStore::new()), Err(SisaError::DataMismatch(_))));
    }

    #[test]
    fn divergence_names_its_stage() {
        let plan = plan_shards(&FaultCondition::all(), 4, None, ShardStrategy::SeverityGrouped).unwrap();
        let mut cfg = toy_config();
        cfg.adam.lr = 1e300;
        let parts = partition_by_shard(&toy_samples(4, 2), &plan).unwrap();
        let none = BTreeSet::new();
        let job = ShardJob {
            shard: 2,
            plan: &plan,
            config: &cfg,
            seed_root: 1,
            samples: &parts[2],
            excluded: &none,
        };
        match train_shard(&job, &MemoryStore::new()) {
            Err(SisaError::Diverged { shard, stage, .. }) => assert_eq!((shard, stage), (2, 1)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
