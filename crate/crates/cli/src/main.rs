use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sisa_core::experiment::{
    emit_reports, poison_recordings, CaseReport, Experiment, ExperimentConfig, PreparedData, Profile,
};
use sisa_core::nn::{grad_check, ModelConfig};
use sisa_core::signal::io::{read_recording, recording_file_name, write_recording, DatasetManifest, ManifestEntry, MANIFEST_FORMAT};
use sisa_core::signal::{build_dataset, generate_all, FaultCondition, Recording};
use sisa_core::sisa::{
    train_all, unlearn, CheckpointStore, ConstituentModel, DataFingerprint, DirStore, ShardSlicePlan, UnlearnRequest,
};

const STATE_FILE: &str = "state.json";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sisa", version, about = "SISA exact unlearning on synthetic transformer fault data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// desk or paper
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Single worker thread
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 48 clean recordings and a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply EMI to conditions of a generated dataset, in place
    Poison {
        #[arg(long)]
        data: PathBuf,
        /// Condition codes or ids, e.g. LA1,HB3 (default: the configured set)
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<String>,
        /// EMI seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the poisoned data: one model (case 1) or a SISA ensemble (case 2)
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        slices: Option<usize>,
    },
    /// Unlearn conditions from a trained run directory (case 4)
    Unlearn {
        /// Run directory written by `train`
        #[arg(long)]
        out: PathBuf,
        /// Conditions to remove (default: the poisoned set)
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<String>,
    },
    /// Retrain one model from scratch without the poisoned conditions (case 3)
    Retrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cases 1-4 over every shard count, with reports
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated shard counts
        #[arg(long, value_delimiter = ',')]
        shards: Vec<usize>,
        #[arg(long)]
        slices: Option<usize>,
        /// Seed of the first repetition
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of the gradients on the tiny model
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 0.25)]
        dropout: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run directory (checkpoints, state and report)
    #[arg(long)]
    out: PathBuf,
    /// Training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory from `synth`; generated from the config when absent
    #[arg(long)]
    data: Option<PathBuf>,
}

/// What `unlearn` needs to pick a run back up.
#[derive(Serialize, Deserialize)]
struct RunState {
    config: ExperimentConfig,
    data: Option<PathBuf>,
    plan: ShardSlicePlan,
    seed: u64,
    excluded: BTreeSet<usize>,
    fingerprints: Vec<DataFingerprint>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { out, seed } => {
            if let Some(s) = seed {
                cfg.synth_seed = s;
            }
            synth(&cfg, &out)
        }
        Command::Poison { data, conditions, seed } => {
            if let Some(s) = seed {
                cfg.emi_seed = s;
            }
            poison(&cfg, &data, &conditions)
        }
        Command::Train { run, shards, slices } => {
            if slices.is_some() {
                cfg.slices = slices;
            }
            fit(cfg, &run, shards, false)
        }
        Command::Retrain { run } => fit(cfg, &run, 1, true),
        Command::Unlearn { out, conditions } => unlearn_run(&out, &conditions, cli.common.deterministic),
        Command::Sweep {
            out,
            shards,
            slices,
            seed,
        } => {
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if !shards.is_empty() {
                cfg.shard_counts = shards;
            }
            if slices.is_some() {
                cfg.slices = slices;
            }
            if let Some(s) = seed {
                cfg.train_seed = s;
            }
            sweep(cfg)
        }
        Command::Gradcheck { seed, batch, dropout } => gradcheck(seed, batch, dropout),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let profile = match &common.profile {
        Some(p) => Profile::parse(p)?,
        None => Profile::Desk,
    };
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::parse(&text, profile).with_context(|| format!("in {}", path.display()))?;
            if common.profile.is_some() && cfg.profile != profile {
                bail!("--profile {} conflicts with profile in {}", profile.as_str(), path.display());
            }
            cfg
        }
        None => ExperimentConfig::for_profile(profile),
    };
    if common.deterministic {
        cfg.workers = 1;
    }
    Ok(cfg)
}

fn parse_conditions(list: &[String]) -> Result<Vec<usize>> {
    list.iter()
        .map(|s| match s.trim().parse::<usize>() {
            Ok(id) => Ok(FaultCondition::from_id(id)?.id()),
            Err(_) => Ok(FaultCondition::parse_code(s.trim())?.id()),
        })
        .collect()
}

fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let recordings = generate_all(cfg.synth_seed);
    write_dataset(cfg, out, &recordings)?;
    println!("wrote {} recordings to {}", recordings.len(), out.display());
    Ok(())
}

fn write_dataset(cfg: &ExperimentConfig, dir: &Path, recordings: &[Recording]) -> Result<()> {
    for rec in recordings {
        write_recording(&dir.join(recording_file_name(rec.condition.id())), rec)?;
    }
    let split = build_dataset(recordings, cfg.window_len, cfg.stride, cfg.split_seed)?;
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        synth_seed: cfg.synth_seed,
        window_len: cfg.window_len,
        stride: cfg.stride,
        split_seed: cfg.split_seed,
        conditions: recordings
            .iter()
            .map(|r| ManifestEntry {
                condition_id: r.condition.id(),
                file: recording_file_name(r.condition.id()),
                poisoned: r.poisoned,
            })
            .collect(),
        standardization: split.stats,
    };
    manifest.write(dir)?;
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Recording>)> {
    let manifest = DatasetManifest::read(dir)?;
    let recordings = manifest
        .conditions
        .iter()
        .map(|c| read_recording(&dir.join(&c.file)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, recordings))
}

fn poison(cfg: &ExperimentConfig, data: &Path, conditions: &[String]) -> Result<()> {
    let (manifest, mut recordings) = read_dataset(data)?;
    let ids = if conditions.is_empty() { cfg.poisoned.clone() } else { parse_conditions(conditions)? };
    ensure!(!ids.is_empty(), "no conditions to poison");
    if let Some(r) = recordings.iter().find(|r| r.poisoned && ids.contains(&r.condition.id())) {
        bail!("condition {} is already poisoned", r.condition.code());
    }
    poison_recordings(&mut recordings, &ids, &cfg.emi, cfg.emi_seed)?;
    let mut cfg = cfg.clone();
    cfg.synth_seed = manifest.synth_seed;
    cfg.window_len = manifest.window_len;
    cfg.stride = manifest.stride;
    cfg.split_seed = manifest.split_seed;
    write_dataset(&cfg, data, &recordings)?;
    let names: Vec<String> = ids.iter().map(|&id| FaultCondition::from_id(id).map(|c| c.code())).collect::<Result<_, _>>()?;
    println!("poisoned {} in {}", names.join(","), data.display());
    Ok(())
}

/// Loads the dataset of a run: from a synth directory, or generated from the config.
fn prepare(cfg: &mut ExperimentConfig, data: Option<&Path>) -> Result<Experiment> {
    match data {
        None => Ok(Experiment::new(cfg.clone())?),
        Some(dir) => {
            let (manifest, recordings) = read_dataset(dir)?;
            cfg.synth_seed = manifest.synth_seed;
            cfg.window_len = manifest.window_len;
            cfg.train.model.window_len = manifest.window_len;
            cfg.stride = manifest.stride;
            cfg.split_seed = manifest.split_seed;
            cfg.poisoned = manifest.poisoned_ids();
            let prepared = PreparedData::from_recordings(recordings, cfg)?;
            Ok(Experiment::with_data(cfg.clone(), prepared)?)
        }
    }
}

fn fit(mut cfg: ExperimentConfig, run: &RunArgs, shards: usize, clean: bool) -> Result<()> {
    if let Some(s) = run.seed {
        cfg.train_seed = s;
    }
    cfg.shard_counts = vec![shards];
    cfg.validate()?;
    let exp = prepare(&mut cfg, run.data.as_deref())?;
    ensure!(
        !clean || !exp.data.poisoned.is_empty(),
        "retrain needs poisoned conditions to leave out (set `poisoned` or run `poison`)"
    );
    let seed = cfg.train_seed;
    let case = match (clean, shards) {
        (true, _) => 3,
        (false, 1) => 1,
        (false, _) => 2,
    };

    let store = DirStore::new(run.out.join("checkpoints"))?;
    let ens = exp.plan(shards)?;
    let excluded = if clean { exp.data.poisoned.clone() } else { BTreeSet::new() };
    let outcome = train_all(&ens, &cfg.train, seed, &exp.data.split.train, &excluded, &store, cfg.workers)?;
    let work = outcome.reports.iter().map(|r| r.stage_epochs).sum();
    let report = evaluate(&exp, case, &ens, seed, &outcome.models, &excluded, outcome.seconds, shards, work)?;

    let state = RunState {
        config: cfg.clone(),
        data: run.data.clone(),
        plan: ens,
        seed,
        excluded,
        fingerprints: outcome.models.iter().map(|m| m.fingerprint.clone()).collect(),
    };
    write_json(&run.out.join(STATE_FILE), &state)?;
    finish(&run.out, &report)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    exp: &Experiment,
    case: u8,
    plan: &ShardSlicePlan,
    seed: u64,
    models: &[ConstituentModel],
    excluded: &BTreeSet<usize>,
    seconds: f64,
    shards_retrained: usize,
    stage_epochs: usize,
) -> Result<CaseReport> {
    let test: Vec<_> = exp
        .data
        .split
        .test
        .iter()
        .filter(|s| !excluded.contains(&s.condition_id))
        .collect();
    let confusion = exp.evaluate(models, &test)?;
    Ok(CaseReport {
        case,
        shards: plan.num_shards(),
        slices: plan.slices_per_shard(),
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

fn unlearn_run(dir: &Path, conditions: &[String], deterministic: bool) -> Result<()> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {} (run `sisa train` first)", path.display()))?;
    let mut state: RunState = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut cfg = state.config.clone();
    if deterministic {
        cfg.workers = 1;
    }
    let exp = prepare(&mut cfg, state.data.as_deref())?;
    let ids: BTreeSet<usize> = if conditions.is_empty() {
        exp.data.poisoned.difference(&state.excluded).copied().collect()
    } else {
        parse_conditions(conditions)?.into_iter().collect()
    };
    ensure!(!ids.is_empty(), "nothing to unlearn");
    let request = UnlearnRequest::new(ids.iter().copied())?;

    let store = DirStore::new(dir.join("checkpoints"))?;
    let stages = state.plan.slices_per_shard();
    let models = state
        .fingerprints
        .iter()
        .enumerate()
        .map(|(shard, fp)| {
            let ck = store
                .load(shard, stages)?
                .with_context(|| format!("final checkpoint of shard {shard} is missing"))?;
            Ok(ConstituentModel {
                shard,
                params: ck.params,
                fingerprint: fp.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let out = unlearn(
        &request,
        &models,
        &store,
        &exp.data.split.train,
        &state.plan,
        &cfg.train,
        state.seed,
        cfg.workers,
    )?;
    state.excluded.extend(ids);
    state.fingerprints = out.models.iter().map(|m| m.fingerprint.clone()).collect();
    let report = evaluate(
        &exp,
        4,
        &state.plan,
        state.seed,
        &out.models,
        &state.excluded,
        out.report.seconds,
        out.report.affected.len(),
        out.report.stage_epochs,
    )?;
    if !out.report.fallback_shards.is_empty() {
        eprintln!("warning: checkpoints missing, retrained shards {:?} from scratch", out.report.fallback_shards);
    }
    write_json(&path, &state)?;
    write_json(&dir.join("unlearn.json"), &out.report)?;
    finish(dir, &report)
}

fn sweep(cfg: ExperimentConfig) -> Result<()> {
    let exp = Experiment::new(cfg.clone())?;
    let outcome = exp.run_sweep()?;
    let files = emit_reports(&outcome.report, &cfg, &cfg.out_dir)?;
    println!("{:>2} {:>2} {:>9} {:>9} {:>9} {:>9} {:>8}", "S", "R", "acc_pois", "acc_clean", "retrain_s", "unlearn_s", "speedup");
    for r in &outcome.report.rows {
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:>2} {:>2} {:>9.4} {:>9} {:>9.2} {:>9} {:>8}",
            r.shards,
            r.slices,
            r.accuracy_poisoned,
            f(r.accuracy_clean, 4),
            r.retrain_seconds,
            f(r.unlearn_seconds, 2),
            f(r.speedup, 2)
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn gradcheck(seed: u64, batch: usize, dropout: f64) -> Result<()> {
    let report = grad_check(&ModelConfig::tiny(dropout), batch, seed)?;
    for (name, err) in &report.per_tensor {
        println!("{name:<16} {err:.3e}");
    }
    println!(
        "max relative error {:.3e} at {}[{}] over {} values",
        report.max_rel_error, report.worst_tensor, report.worst_index, report.values_checked
    );
    ensure!(
        report.max_rel_error < GRADCHECK_TOLERANCE,
        "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
        report.max_rel_error
    );
    println!("ok");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn finish(dir: &Path, report: &CaseReport) -> Result<()> {
    write_json(&dir.join(format!("case{}.json", report.case)), report)?;
    let csv = dir.join(format!("confusion_case{}.csv", report.case));
    fs::write(&csv, report.confusion.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    print_case(report);
    Ok(())
}

fn print_case(r: &CaseReport) {
    println!(
        "case {} S={} R={} seed={} accuracy={:.4} ({} test windows) seconds={:.2} shards_retrained={} stage_epochs={}",
        r.case, r.shards, r.slices, r.seed, r.accuracy, r.test_size, r.seconds, r.shards_retrained, r.stage_epochs
    );
    let recall: Vec<String> = sisa_core::signal::CLASS_NAMES
        .iter()
        .zip(r.recall)
        .map(|(n, v)| format!("{n}={}", v.map_or("-".into(), |x| format!("{x:.3}"))))
        .collect();
    println!("recall {}", recall.join(" "));
}
