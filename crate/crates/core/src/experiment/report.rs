use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::median;
use super::runner::{CaseReport, SweepReport};
use super::ExperimentError;
use crate::signal::CLASS_NAMES;

#[derive(Serialize)]
struct Environment {
    crate_version: &'static str,
    os: &'static str,
    arch: &'static str,
    available_cpus: usize,
    workers: usize,
}

#[derive(Serialize)]
struct Seeds {
    synth: u64,
    split: u64,
    emi: u64,
    train: Vec<u64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a ExperimentConfig,
    environment: Environment,
    seeds: Seeds,
    sweep: &'a SweepReport,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per (case, S): accuracy, recall and confusion come from the first
/// repetition, times are medians over repetitions.
pub fn summary_csv(report: &SweepReport) -> String {
    let mut out = String::from("case,shards,slices,seed,accuracy,accuracy_median");
    for name in CLASS_NAMES {
        write!(out, ",recall_{name}").expect("string write");
    }
    out.push_str(",seconds_median,speedup,shards_retrained,stage_epochs,test_size\n");
    for row in &report.rows {
        for case in 1..=4u8 {
            let runs: Vec<&CaseReport> = report.cases.iter().filter(|c| c.case == case && c.shards == row.shards).collect();
            let Some(first) = runs.first() else { continue };
            let acc_med = median(&runs.iter().map(|c| c.accuracy).collect::<Vec<_>>());
            let secs = median(&runs.iter().map(|c| c.seconds).collect::<Vec<_>>());
            write!(
                out,
                "{},{},{},{},{},{}",
                case, row.shards, first.slices, first.seed, first.accuracy, acc_med
            )
            .expect("string write");
            for r in first.recall {
                write!(out, ",{}", opt(r)).expect("string write");
            }
            let speedup = if case == 4 { opt(row.speedup) } else { String::new() };
            writeln!(
                out,
                ",{secs},{speedup},{},{},{}",
                first.shards_retrained, first.stage_epochs, first.test_size
            )
            .expect("string write");
        }
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, ExperimentError> {
    fs::write(&path, text).map_err(|e| ExperimentError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Writes `summary.csv`, `confusion_<case>_<S>.csv` and `run.json` into `dir`.
pub fn emit_reports(report: &SweepReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = vec![write(dir.join("summary.csv"), &summary_csv(report))?];
    for row in &report.rows {
        for case in 1..=4u8 {
            if let Some(c) = report.cases.iter().find(|c| c.case == case && c.shards == row.shards) {
                written.push(write(
                    dir.join(format!("confusion_{case}_{}.csv", row.shards)),
                    &c.confusion.to_csv(),
                )?);
            }
        }
    }
    let record = RunRecord {
        config,
        environment: Environment {
            crate_version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            available_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            workers: config.workers,
        },
        seeds: Seeds {
            synth: config.synth_seed,
            split: config.split_seed,
            emi: config.emi_seed,
            train: (0..config.repetitions as u64).map(|k| config.train_seed + k).collect(),
        },
        sweep: report,
    };
    let json = serde_json::to_string_pretty(&record)?;
    written.push(write(dir.join("run.json"), &(json + "\n"))?);
    Ok(written)
}
