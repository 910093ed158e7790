use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::nn::{AdamConfig, ModelConfig};
use crate::signal::{channel_index, EmiSpec, FaultCondition, DEFAULT_STRIDE, DEFAULT_WINDOW_LEN, NUM_CONDITIONS};
use crate::sisa::{default_slices, ShardStrategy, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Reduced network and epochs for a single-core machine.
    Desk,
    /// The full-size setting.
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(ExperimentError::Config(format!("unknown profile {other:?} (desk|paper)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

/// Which current channels the interference corrupts, relative to the poisoned condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmiTarget {
    /// The faulted phase's sensor.
    Own,
    /// The same phase on the opposite side.
    Counterpart,
    Both,
}

impl EmiTarget {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "own" => Ok(Self::Own),
            "counterpart" => Ok(Self::Counterpart),
            "both" => Ok(Self::Both),
            other => Err(ExperimentError::Config(format!(
                "unknown emi target {other:?} (own|counterpart|both)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Own => "own",
            Self::Counterpart => "counterpart",
            Self::Both => "both",
        }
    }

    pub fn channels(self, condition: &FaultCondition) -> Vec<usize> {
        let own = channel_index(condition.side, condition.phase);
        let other = channel_index(condition.side.opposite(), condition.phase);
        match self {
            Self::Own => vec![own],
            Self::Counterpart => vec![other],
            Self::Both => vec![own, other],
        }
    }
}

/// EMI magnitudes; channels and seed are filled in per poisoned condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmiSettings {
    pub target: EmiTarget,
    pub noise_std: f64,
    pub spike_rate_hz: f64,
    pub spike_magnitude: f64,
    pub amplitude_bias: f64,
    pub phase_deviation_rad: f64,
    pub harmonics: Vec<(u32, f64)>,
    pub onset_s: f64,
    pub ramp_s: f64,
}

impl Default for EmiSettings {
    /// A CT gain error on the counterpart sensor that sets in at 8 s and grows
    /// to 1.4 by 12 s: the end of the training split sees a mild drift, the
    /// test split the full error. Stationary EMI (including the magnitudes of
    /// [`EmiSpec::default_for`]) is simply learned as a feature of the
    /// poisoned condition and leaves its test windows correctly classified.
    fn default() -> Self {
        Self {
            target: EmiTarget::Counterpart,
            noise_std: 0.0,
            spike_rate_hz: 0.0,
            spike_magnitude: 0.0,
            amplitude_bias: 1.4,
            phase_deviation_rad: 0.0,
            harmonics: Vec::new(),
            onset_s: 8.0,
            ramp_s: 4.0,
        }
    }
}

impl EmiSettings {
    pub fn spec_for(&self, condition: &FaultCondition, seed: u64) -> EmiSpec {
        EmiSpec {
            noise_std: self.noise_std,
            spike_rate_hz: self.spike_rate_hz,
            spike_magnitude: self.spike_magnitude,
            amplitude_bias: self.amplitude_bias,
            phase_deviation_rad: self.phase_deviation_rad,
            harmonics: self.harmonics.clone(),
            affected_channels: self.target.channels(condition),
            seed,
            onset_s: self.onset_s,
            ramp_s: self.ramp_s,
        }
    }
}

/// Named poisoned sets.
pub fn single_poison() -> Vec<usize> {
    vec![code("LA1")]
}

/// One condition per label: the mildest HV faults and mid-severity LV faults,
/// so the set lies in slice 1 of both shards when `S = 2`.
pub fn six_poison() -> Vec<usize> {
    ["HA1", "HB1", "HC1", "LA5", "LB5", "LC5"].into_iter().map(code).collect()
}

fn code(c: &str) -> usize {
    FaultCondition::parse_code(c).expect("valid code").id()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub shard_counts: Vec<usize>,
    /// Slice count override for SISA runs; `None` gives one condition per label per slice.
    pub slices: Option<usize>,
    pub strategy: ShardStrategy,
    pub poisoned: Vec<usize>,
    pub emi: EmiSettings,
    pub train: TrainConfig,
    pub window_len: usize,
    pub stride: usize,
    pub synth_seed: u64,
    pub split_seed: u64,
    pub emi_seed: u64,
    pub train_seed: u64,
    /// Timed repetitions; repetition `k` trains with seed `train_seed + k`.
    pub repetitions: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            shard_counts: vec![1, 2, 4],
            slices: None,
            strategy: ShardStrategy::SeverityGrouped,
            poisoned: single_poison(),
            emi: EmiSettings::default(),
            train: TrainConfig {
                model: ModelConfig {
                    lstm1_hidden: 32,
                    lstm2_hidden: 16,
                    fc_hidden: 32,
                    ..ModelConfig::default()
                },
                adam: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                epochs_total: 12,
                batch_size: 32,
            },
            window_len: DEFAULT_WINDOW_LEN,
            stride: 50,
            synth_seed: 1,
            split_seed: 2,
            emi_seed: 3,
            train_seed: 4,
            repetitions: 3,
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            train: TrainConfig::default(),
            stride: DEFAULT_STRIDE,
            repetitions: 1,
            ..Self::desk()
        }
    }

    /// Slices per shard used for `num_shards`. A single shard is trained without slicing.
    pub fn slices_for(&self, num_shards: usize) -> Option<usize> {
        if num_shards == 1 {
            Some(1)
        } else {
            self.slices
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.shard_counts.is_empty() {
            return bad("shards must list at least one value".into());
        }
        for &s in &self.shard_counts {
            if default_slices(s).is_none() {
                return bad(format!("{s} shards cannot hold label-balanced slices (use 1, 2, 4 or 8)"));
            }
            if let Some(r) = self.slices_for(s) {
                let per_label = default_slices(s).unwrap_or(0);
                if r == 0 || per_label % r != 0 {
                    return bad(format!("{r} slices do not divide {per_label} conditions per label at S={s}"));
                }
            }
        }
        if let Some(&id) = self.poisoned.iter().find(|&&id| id >= NUM_CONDITIONS) {
            return bad(format!("poisoned condition {id} does not exist"));
        }
        let mut sorted = self.poisoned.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.poisoned.len() {
            return bad("poisoned conditions are listed twice".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.train.model.window_len != self.window_len {
            return bad(format!(
                "model window_len {} differs from data window_len {}",
                self.train.model.window_len, self.window_len
            ));
        }
        if self.stride == 0 || self.stride > self.window_len {
            return bad(format!("stride {} must be in 1..={}", self.stride, self.window_len));
        }
        self.emi.spec_for(&FaultCondition::from_id(0).expect("id 0"), 0).validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        let v = value.trim();
        let num = |what: &str| -> Result<f64, ExperimentError> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ExperimentError::Config(format!("{what}: expected a number, got {v:?}")))
        };
        let int = |what: &str| -> Result<u64, ExperimentError> {
            v.parse::<u64>()
                .map_err(|_| ExperimentError::Config(format!("{what}: expected a non-negative integer, got {v:?}")))
        };
        match key {
            "profile" => {
                let p = Profile::parse(v)?;
                if p != self.profile {
                    return Err(ExperimentError::Config(
                        "profile must be the first setting (or passed with --profile)".into(),
                    ));
                }
            }
            "shards" => {
                self.shard_counts = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| ExperimentError::Config(format!("shards: expected a list like 1,2,4, got {v:?}")))?;
            }
            "slices" => {
                self.slices = match v {
                    "auto" => None,
                    _ => Some(int(key)? as usize),
                }
            }
            "strategy" => self.strategy = ShardStrategy::parse(v)?,
            "poisoned" => self.poisoned = parse_poisoned(v)?,
            "emi.target" => self.emi.target = EmiTarget::parse(v)?,
            "emi.noise_std" => self.emi.noise_std = num(key)?,
            "emi.spike_rate_hz" => self.emi.spike_rate_hz = num(key)?,
            "emi.spike_magnitude" => self.emi.spike_magnitude = num(key)?,
            "emi.amplitude_bias" => self.emi.amplitude_bias = num(key)?,
            "emi.phase_deviation_rad" => self.emi.phase_deviation_rad = num(key)?,
            "emi.harmonics" => self.emi.harmonics = parse_harmonics(v)?,
            "emi.onset_s" => self.emi.onset_s = num(key)?,
            "emi.ramp_s" => self.emi.ramp_s = num(key)?,
            "lstm1_hidden" => self.train.model.lstm1_hidden = int(key)? as usize,
            "lstm2_hidden" => self.train.model.lstm2_hidden = int(key)? as usize,
            "fc_hidden" => self.train.model.fc_hidden = int(key)? as usize,
            "dropout" => self.train.model.dropout_rate = num(key)?,
            "epochs" => self.train.epochs_total = int(key)? as usize,
            "batch_size" => self.train.batch_size = int(key)? as usize,
            "lr" => self.train.adam.lr = num(key)?,
            "beta1" => self.train.adam.beta1 = num(key)?,
            "beta2" => self.train.adam.beta2 = num(key)?,
            "adam_eps" => self.train.adam.eps = num(key)?,
            "window_len" => {
                self.window_len = int(key)? as usize;
                self.train.model.window_len = self.window_len;
            }
            "stride" => self.stride = int(key)? as usize,
            "synth_seed" => self.synth_seed = int(key)?,
            "split_seed" => self.split_seed = int(key)?,
            "emi_seed" => self.emi_seed = int(key)?,
            "train_seed" | "seed" => self.train_seed = int(key)?,
            "repetitions" => self.repetitions = int(key)? as usize,
            "workers" => self.workers = int(key)? as usize,
            "out" => self.out_dir = PathBuf::from(v),
            other => return Err(ExperimentError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `#` starts a comment; unknown keys are errors.
    ///
    /// A `profile` line selects the base settings and must precede every other key.
    pub fn parse(text: &str, default_profile: Profile) -> Result<Self, ExperimentError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let profile = match entries.iter().position(|(_, k, _)| k == "profile") {
            Some(0) => Profile::parse(&entries[0].2)?,
            Some(i) => {
                return Err(ExperimentError::Config(format!(
                    "line {}: profile must come before other keys",
                    entries[i].0
                )))
            }
            None => default_profile,
        };
        let mut cfg = Self::for_profile(profile);
        for (n, k, v) in &entries {
            cfg.set(k, v)
                .map_err(|e| ExperimentError::Config(format!("line {n}: {e}")))?;
        }
        Ok(cfg)
    }
}

fn parse_poisoned(v: &str) -> Result<Vec<usize>, ExperimentError> {
    match v {
        "single" => return Ok(single_poison()),
        "six" => return Ok(six_poison()),
        "none" | "" => return Ok(Vec::new()),
        _ => {}
    }
    v.split(',')
        .map(|s| {
            let s = s.trim();
            match s.parse::<usize>() {
                Ok(id) if id < NUM_CONDITIONS => Ok(id),
                Ok(id) => Err(ExperimentError::Config(format!("condition id {id} out of range"))),
                Err(_) => Ok(FaultCondition::parse_code(s)?.id()),
            }
        })
        .collect()
}

fn parse_harmonics(v: &str) -> Result<Vec<(u32, f64)>, ExperimentError> {
    if v == "none" || v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|pair| {
            let bad = || ExperimentError::Config(format!("harmonic {pair:?}: expected order:amplitude"));
            let (o, a) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok((o.trim().parse().map_err(|_| bad())?, a.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}
