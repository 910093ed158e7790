//! Recording files and the dataset manifest.
//!
//! A recording file is a header line
//! `itscf-v1,<condition_id>,<side>,<phase>,<severity>,<sample_rate>,<poisoned>`
//! followed by one row per sample with the six channel values printed to 17
//! significant digits, so files round-trip exactly and regenerate byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::condition::{FaultCondition, Phase, Side, NUM_CLASSES};
use super::generate::Recording;
use super::split::StandardizationStats;
use super::SignalError;

pub const RECORDING_MAGIC: &str = "itscf-v1";
pub const MANIFEST_FORMAT: &str = "itscf-manifest-v1";

fn io_err(path: &Path, e: std::io::Error) -> SignalError {
    SignalError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn recording_file_name(condition_id: usize) -> String {
    format!("condition_{condition_id:02}.csv")
}

pub fn encode_recording(rec: &Recording) -> String {
    let c = &rec.condition;
    let mut out = String::with_capacity(rec.len() * NUM_CLASSES * 25 + 64);
    writeln!(
        out,
        "{RECORDING_MAGIC},{},{},{},{},{},{}",
        c.id(),
        c.side.as_str(),
        c.phase.as_str(),
        c.severity,
        rec.sample_rate_hz,
        rec.poisoned
    )
    .expect("string write");
    for n in 0..rec.len() {
        for (k, ch) in rec.channels.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{:.16e}", ch[n]).expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<(), SignalError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(encode_recording(rec).as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn parse_header(line: &str) -> Result<(FaultCondition, u32, bool), SignalError> {
    let bad = |what: &str| SignalError::Parse(format!("recording header: {what} in {line:?}"));
    let fields: Vec<&str> = line.trim_end().split(',').collect();
    if fields.len() != 7 || fields[0] != RECORDING_MAGIC {
        return Err(bad("expected 7 fields starting with itscf-v1"));
    }
    let id: usize = fields[1].parse().map_err(|_| bad("condition id"))?;
    let side = Side::parse(fields[2])?;
    let phase = Phase::parse(fields[3])?;
    let severity: u8 = fields[4].parse().map_err(|_| bad("severity"))?;
    let rate: u32 = fields[5].parse().map_err(|_| bad("sample rate"))?;
    let poisoned: bool = fields[6].parse().map_err(|_| bad("poisoned flag"))?;
    let cond = FaultCondition::new(side, phase, severity)?;
    if cond.id() != id {
        return Err(bad("condition id does not match side/phase/severity"));
    }
    Ok((cond, rate, poisoned))
}

pub fn read_recording(path: &Path) -> Result<Recording, SignalError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| SignalError::Parse(format!("{}: empty file", path.display())))?
        .map_err(|e| io_err(path, e))?;
    let (condition, sample_rate_hz, poisoned) = parse_header(&header)?;
    let mut channels = vec![Vec::new(); NUM_CLASSES];
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let mut count = 0;
        for (ch, field) in line.split(',').enumerate() {
            if ch >= NUM_CLASSES {
                break;
            }
            let v: f64 = field.parse().map_err(|_| {
                SignalError::Parse(format!("{}: row {} field {ch}: {field:?}", path.display(), row + 1))
            })?;
            if !v.is_finite() {
                return Err(SignalError::Parse(format!("{}: non-finite sample at row {}", path.display(), row + 1)));
            }
            channels[ch].push(v);
            count += 1;
        }
        if count != NUM_CLASSES || line.split(',').count() != NUM_CLASSES {
            return Err(SignalError::Parse(format!(
                "{}: row {} must have {NUM_CLASSES} values",
                path.display(),
                row + 1
            )));
        }
    }
    Ok(Recording {
        condition,
        sample_rate_hz,
        channels,
        poisoned,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition_id: usize,
    pub file: String,
    pub poisoned: bool,
}

/// Describes a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub synth_seed: u64,
    pub window_len: usize,
    pub stride: usize,
    pub split_seed: u64,
    pub conditions: Vec<ManifestEntry>,
    pub standardization: StandardizationStats,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn poisoned_ids(&self) -> Vec<usize> {
        self.conditions.iter().filter(|c| c.poisoned).map(|c| c.condition_id).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, SignalError> {
        let path = dir.join(Self::FILE_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| SignalError::Parse(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, SignalError> {
        let path = dir.join(Self::FILE_NAME);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| SignalError::Parse(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(SignalError::Parse(format!("unsupported manifest format {:?}", m.format)));
        }
        Ok(m)
    }
}
