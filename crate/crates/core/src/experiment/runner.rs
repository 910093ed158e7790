use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::PreparedData;
use super::metrics::{median, ConfusionMatrix};
use super::ExperimentError;
use crate::signal::{FaultCondition, WindowedSample, NUM_CLASSES};
use crate::sisa::{
    plan_shards, predict_batch, stage_epochs, train_all, unlearn, ConstituentModel, MemoryStore, ShardSlicePlan,
    TrainOutcome, UnlearnOutcome, UnlearnRequest,
};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: u8,
    pub shards: usize,
    pub slices: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub recall: [Option<f64>; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    /// Wall time of the (re)training phase only.
    pub seconds: f64,
    pub shards_retrained: usize,
    /// (stage, epoch) units executed.
    pub stage_epochs: usize,
    pub test_size: usize,
}

/// A trained ensemble and the checkpoints that allow unlearning from it.
#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub plan: ShardSlicePlan,
    pub seed: u64,
    pub excluded: BTreeSet<usize>,
    pub models: Vec<ConstituentModel>,
    pub store: MemoryStore,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub shards: usize,
    pub slices: usize,
    /// Median over repetitions.
    pub accuracy_poisoned: f64,
    pub accuracy_clean: Option<f64>,
    pub train_seconds: f64,
    pub retrain_seconds: f64,
    pub unlearn_seconds: Option<f64>,
    /// Full clean retrain time over unlearning time.
    pub speedup: Option<f64>,
    pub shards_retrained: usize,
    pub unlearn_stage_epochs: usize,
    /// Stage-epochs of retraining every shard of this ensemble.
    pub full_stage_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Every case of every repetition; at `S = 1` cases 2 and 4 are cases 1 and 3.
    pub cases: Vec<CaseReport>,
}

/// Sweep results plus the trained ensembles behind them, keyed by (repetition, shards).
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub poisoned: BTreeMap<(usize, usize), TrainedEnsemble>,
    pub unlearned: BTreeMap<(usize, usize), UnlearnOutcome>,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: PreparedData,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let data = PreparedData::generate(&config)?;
        Ok(Self { config, data })
    }

    pub fn with_data(config: ExperimentConfig, data: PreparedData) -> Result<Self, ExperimentError> {
        config.validate()?;
        Ok(Self { config, data })
    }

    pub fn plan(&self, shards: usize) -> Result<ShardSlicePlan, ExperimentError> {
        Ok(plan_shards(
            &FaultCondition::all(),
            shards,
            self.config.slices_for(shards),
            self.config.strategy,
        )?)
    }

    /// Trains every shard; `clean` leaves out the poisoned conditions.
    pub fn train(&self, shards: usize, seed: u64, clean: bool) -> Result<TrainedEnsemble, ExperimentError> {
        let plan = self.plan(shards)?;
        let excluded = if clean { self.data.poisoned.clone() } else { BTreeSet::new() };
        let store = MemoryStore::new();
        let outcome = train_all(
            &plan,
            &self.config.train,
            seed,
            &self.data.split.train,
            &excluded,
            &store,
            self.config.workers,
        )?;
        Ok(TrainedEnsemble {
            plan,
            seed,
            excluded,
            models: outcome.models.clone(),
            store,
            outcome,
        })
    }

    pub fn evaluate(&self, models: &[ConstituentModel], test: &[&WindowedSample]) -> Result<ConfusionMatrix, ExperimentError> {
        let inputs: Vec<f64> = test.iter().flat_map(|s| s.window.iter().copied()).collect();
        if inputs.is_empty() {
            return Ok(ConfusionMatrix::default());
        }
        let preds = predict_batch(models, &self.config.train.model, &inputs, EVAL_CHUNK)?;
        Ok(ConfusionMatrix::from_pairs(test.iter().zip(&preds).map(|(s, p)| (s.label, p.label))))
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        case: u8,
        ens_plan: &ShardSlicePlan,
        seed: u64,
        models: &[ConstituentModel],
        clean: bool,
        seconds: f64,
        shards_retrained: usize,
        stage_epochs: usize,
    ) -> Result<CaseReport, ExperimentError> {
        let test = self.data.test_set(clean);
        let confusion = self.evaluate(models, &test)?;
        Ok(CaseReport {
            case,
            shards: ens_plan.num_shards(),
            slices: ens_plan.slices_per_shard(),
            seed,
            accuracy: confusion.accuracy(),
            recall: confusion.recall(),
            test_size: test.len(),
            confusion,
            seconds,
            shards_retrained,
            stage_epochs,
        })
    }

    fn training_case(&self, case: u8, shards: usize, seed: u64, clean: bool) -> Result<(CaseReport, TrainedEnsemble), ExperimentError> {
        let ens = self.train(shards, seed, clean)?;
        let work = ens.outcome.reports.iter().map(|r| r.stage_epochs).sum();
        let rep = self.report(case, &ens.plan, seed, &ens.models, clean, ens.outcome.seconds, shards, work)?;
        Ok((rep, ens))
    }

    /// Case 1: one model, no slicing, poisoned data.
    pub fn case1(&self, seed: u64) -> Result<(CaseReport, TrainedEnsemble), ExperimentError> {
        self.training_case(1, 1, seed, false)
    }

    /// Case 2: SISA ensemble on poisoned data.
    pub fn case2(&self, shards: usize, seed: u64) -> Result<(CaseReport, TrainedEnsemble), ExperimentError> {
        self.training_case(2, shards, seed, false)
    }

    /// Case 3: one model retrained from scratch without the poisoned conditions.
    pub fn case3(&self, seed: u64) -> Result<(CaseReport, TrainedEnsemble), ExperimentError> {
        self.training_case(3, 1, seed, true)
    }

    /// Case 4: unlearns the poisoned conditions from a Case-2 ensemble.
    ///
    /// Works on a copy of the ensemble's checkpoints, so `base` stays reusable.
    pub fn case4(&self, base: &TrainedEnsemble) -> Result<(CaseReport, UnlearnOutcome), ExperimentError> {
        if !base.excluded.is_empty() {
            return Err(ExperimentError::MissingPrerequisite(
                "case 4 needs a case-2 ensemble trained on the poisoned data".into(),
            ));
        }
        let request = UnlearnRequest::new(self.data.poisoned.iter().copied()).map_err(|_| {
            ExperimentError::MissingPrerequisite("case 4 needs at least one poisoned condition".into())
        })?;
        let store = base.store.clone();
        let out = unlearn(
            &request,
            &base.models,
            &store,
            &self.data.split.train,
            &base.plan,
            &self.config.train,
            base.seed,
            self.config.workers,
        )?;
        let rep = self.report(
            4,
            &base.plan,
            base.seed,
            &out.models,
            true,
            out.report.seconds,
            out.report.affected.len(),
            out.report.stage_epochs,
        )?;
        Ok((rep, out))
    }

    /// Runs one case. Case 4 requires the Case-2 ensemble it unlearns from.
    pub fn run_case(&self, case: u8, shards: usize, seed: u64, prior: Option<&TrainedEnsemble>) -> Result<CaseReport, ExperimentError> {
        match case {
            1 => Ok(self.case1(seed)?.0),
            2 => Ok(self.case2(shards, seed)?.0),
            3 => Ok(self.case3(seed)?.0),
            4 => {
                let base = prior.ok_or_else(|| {
                    ExperimentError::MissingPrerequisite("case 4 needs the checkpoints of a case-2 run (train first)".into())
                })?;
                Ok(self.case4(base)?.0)
            }
            other => Err(ExperimentError::Config(format!("no case {other} (cases are 1..=4)"))),
        }
    }

    /// For every repetition and shard count: poisoned training, unlearning and the clean-retrain baseline.
    ///
    /// At `S = 1` the ensemble is the single unsliced model, so Case 2 is Case 1
    /// and unlearning is exactly the Case-3 retrain; those runs are reused.
    pub fn run_sweep(&self) -> Result<SweepOutcome, ExperimentError> {
        let cfg = &self.config;
        let has_poison = !self.data.poisoned.is_empty();
        let mut cases = Vec::new();
        let mut poisoned = BTreeMap::new();
        let mut unlearned = BTreeMap::new();
        for rep in 0..cfg.repetitions {
            let seed = cfg.train_seed + rep as u64;
            let (c1, e1) = self.case1(seed)?;
            let (c3, _) = self.case3(seed)?;
            for &s in &cfg.shard_counts {
                let ctx = |e: ExperimentError| e.context(format!("S={s}, repetition {rep}"));
                let (c2, e2) = if s == 1 {
                    (CaseReport { case: 2, ..c1.clone() }, e1.clone())
                } else {
                    self.case2(s, seed).map_err(ctx)?
                };
                cases.push(CaseReport { shards: s, ..c1.clone() });
                cases.push(c2);
                cases.push(CaseReport { shards: s, ..c3.clone() });
                if has_poison {
                    if s == 1 {
                        cases.push(CaseReport { case: 4, ..c3.clone() });
                    } else {
                        let (c4, out) = self.case4(&e2).map_err(ctx)?;
                        cases.push(c4);
                        unlearned.insert((rep, s), out);
                    }
                }
                poisoned.insert((rep, s), e2);
            }
        }

        let rows = cfg
            .shard_counts
            .iter()
            .map(|&s| {
                let pick = |case: u8| -> Vec<&CaseReport> { cases.iter().filter(|c| c.case == case && c.shards == s).collect() };
                let acc = |v: &[&CaseReport]| median(&v.iter().map(|c| c.accuracy).collect::<Vec<_>>());
                let secs = |v: &[&CaseReport]| median(&v.iter().map(|c| c.seconds).collect::<Vec<_>>());
                let (c2, c3, c4) = (pick(2), pick(3), pick(4));
                let plan_slices = c2.first().map_or(0, |c| c.slices);
                let retrain = secs(&c3);
                let unlearn_secs = (!c4.is_empty()).then(|| secs(&c4));
                let schedule: usize = stage_epochs(cfg.train.epochs_total, plan_slices).iter().sum();
                SweepRow {
                    shards: s,
                    slices: plan_slices,
                    accuracy_poisoned: acc(&c2),
                    accuracy_clean: (!c4.is_empty()).then(|| acc(&c4)),
                    train_seconds: secs(&c2),
                    retrain_seconds: retrain,
                    unlearn_seconds: unlearn_secs,
                    speedup: unlearn_secs.map(|u| retrain / u),
                    shards_retrained: c4.first().map_or(0, |c| c.shards_retrained),
                    unlearn_stage_epochs: c4.first().map_or(0, |c| c.stage_epochs),
                    full_stage_epochs: s * schedule,
                }
            })
            .collect();
        Ok(SweepOutcome {
            report: SweepReport { rows, cases },
            poisoned,
            unlearned,
        })
    }
}
