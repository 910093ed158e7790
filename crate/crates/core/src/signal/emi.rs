//! Electromagnetic-interference sensor failures applied to recorded currents.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::condition::NUM_CLASSES;
use super::generate::{Recording, NOMINAL_FREQ_HZ, NOMINAL_PEAK_A};
use super::SignalError;
use crate::nn::{Purpose, RngKey};

/// Perturbation parameters. Magnitudes are relative to each channel's nominal peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmiSpec {
    pub noise_std: f64,
    pub spike_rate_hz: f64,
    pub spike_magnitude: f64,
    pub amplitude_bias: f64,
    pub phase_deviation_rad: f64,
    /// `(order, relative amplitude)`
    pub harmonics: Vec<(u32, f64)>,
    pub affected_channels: Vec<usize>,
    pub seed: u64,
    /// Seconds before the failure starts; earlier samples are untouched.
    #[serde(default)]
    pub onset_s: f64,
    /// Seconds over which the failure grows linearly to full strength. 0 = full at onset.
    #[serde(default)]
    pub ramp_s: f64,
}

impl EmiSpec {
    /// Perturbs nothing; useful as a base for struct-update syntax.
    pub fn neutral(affected_channels: Vec<usize>, seed: u64) -> Self {
        Self {
            noise_std: 0.0,
            spike_rate_hz: 0.0,
            spike_magnitude: 0.0,
            amplitude_bias: 1.0,
            phase_deviation_rad: 0.0,
            harmonics: Vec::new(),
            affected_channels,
            seed,
            onset_s: 0.0,
            ramp_s: 0.0,
        }
    }

    /// Magnitudes used by the experiments.
    pub fn default_for(affected_channels: Vec<usize>, seed: u64) -> Self {
        Self {
            noise_std: 0.08,
            spike_rate_hz: 20.0,
            spike_magnitude: 1.5,
            amplitude_bias: 1.15,
            phase_deviation_rad: 0.1,
            harmonics: vec![(7, 0.1)],
            affected_channels,
            seed,
            onset_s: 0.0,
            ramp_s: 0.0,
        }
    }

    /// Failure strength in `[0, 1]` at time `t` seconds.
    pub fn intensity(&self, t: f64) -> f64 {
        if t < self.onset_s {
            0.0
        } else if self.ramp_s > 0.0 {
            ((t - self.onset_s) / self.ramp_s).min(1.0)
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |msg: String| Err(SignalError::InvalidEmi(msg));
        if self.affected_channels.is_empty() {
            return bad("affected_channels is empty".into());
        }
        if let Some(ch) = self.affected_channels.iter().find(|&&c| c >= NUM_CLASSES) {
            return bad(format!("channel {ch} does not exist"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be ≥ 0", self.noise_std));
        }
        if !(self.spike_rate_hz >= 0.0 && self.spike_rate_hz.is_finite()) {
            return bad(format!("spike_rate_hz {} must be ≥ 0", self.spike_rate_hz));
        }
        if !self.spike_magnitude.is_finite() || self.spike_magnitude < 0.0 {
            return bad(format!("spike_magnitude {} must be ≥ 0", self.spike_magnitude));
        }
        if !(self.amplitude_bias > 0.0 && self.amplitude_bias.is_finite()) {
            return bad(format!("amplitude_bias {} must be > 0", self.amplitude_bias));
        }
        if !self.phase_deviation_rad.is_finite() {
            return bad("phase_deviation_rad must be finite".into());
        }
        if !(self.onset_s >= 0.0 && self.onset_s.is_finite() && self.ramp_s >= 0.0 && self.ramp_s.is_finite()) {
            return bad(format!("onset_s {} and ramp_s {} must be finite and ≥ 0", self.onset_s, self.ramp_s));
        }
        if let Some((order, _)) = self.harmonics.iter().find(|(o, a)| *o < 2 || !a.is_finite()) {
            return bad(format!("harmonic order {order} must be ≥ 2 with finite amplitude"));
        }
        Ok(())
    }
}

/// Returns a poisoned copy of `recording`.
///
/// Affected channels are perturbed in a fixed order: amplitude bias, phase
/// deviation, harmonics, band-limited noise, impulsive spikes. Other channels
/// are copied unchanged. With an onset or ramp, each affected sample is
/// `x + e(t)·(x' − x)` where `x'` is the fully perturbed value; samples at full
/// strength keep `x'` exactly.
pub fn apply_emi(recording: &Recording, spec: &EmiSpec) -> Result<Recording, SignalError> {
    spec.validate()?;
    let mut out = recording.clone();
    out.poisoned = true;
    let fs = f64::from(recording.sample_rate_hz);
    let mut channels: Vec<usize> = spec.affected_channels.clone();
    channels.sort_unstable();
    channels.dedup();
    for ch in channels {
        let peak = NOMINAL_PEAK_A[ch];
        let mut rng = RngKey::new(spec.seed, Purpose::Emi).shard(ch as u32).stream();
        let x = &mut out.channels[ch];

        if spec.amplitude_bias != 1.0 {
            for v in x.iter_mut() {
                *v *= spec.amplitude_bias;
            }
        }

        if spec.phase_deviation_rad != 0.0 {
            // A phase lead of φ at the fundamental is a time advance of φ/(2π·f₀).
            let shift = spec.phase_deviation_rad / (2.0 * PI * NOMINAL_FREQ_HZ) * fs;
            *x = fractional_shift(x, shift);
        }

        if !spec.harmonics.is_empty() {
            let omega = 2.0 * PI * NOMINAL_FREQ_HZ / fs;
            for &(order, rel) in &spec.harmonics {
                let offset = rng.random_range(0.0..2.0 * PI);
                let amp = rel * peak;
                for (n, v) in x.iter_mut().enumerate() {
                    *v += amp * (f64::from(order) * omega * n as f64 + offset).sin();
                }
            }
        }

        if spec.noise_std > 0.0 {
            // Two-tap average of white noise, rescaled to keep the target std;
            // this puts a null at Nyquist.
            let normal = Normal::new(0.0, spec.noise_std * peak).expect("valid std");
            let mut prev = normal.sample(&mut rng);
            for v in x.iter_mut() {
                let cur = normal.sample(&mut rng);
                *v += (cur + prev) / 2f64.sqrt();
                prev = cur;
            }
        }

        if spec.spike_rate_hz > 0.0 && spec.spike_magnitude > 0.0 {
            let gaps = Exp::new(spec.spike_rate_hz).expect("positive rate");
            let duration = x.len() as f64 / fs;
            let mut t = gaps.sample(&mut rng);
            while t < duration {
                let idx = ((t * fs) as usize).min(x.len() - 1);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                x[idx] += sign * spec.spike_magnitude * peak;
                t += gaps.sample(&mut rng);
            }
        }
        let clean = &recording.channels[ch];
        for (n, (v, c)) in x.iter_mut().zip(clean).enumerate() {
            let e = spec.intensity(n as f64 / fs);
            if e < 1.0 {
                *v = c + e * (*v - c);
            }
        }
    }
    Ok(out)
}

/// `y[n] = x(n + shift)` with Catmull-Rom interpolation and clamped edges.
fn fractional_shift(x: &[f64], shift: f64) -> Vec<f64> {
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|i| {
            let pos = i as f64 + shift;
            let base = pos.floor();
            let t = pos - base;
            let b = base as isize;
            let (p0, p1, p2, p3) = (at(b - 1), at(b), at(b + 1), at(b + 2));
            0.5 * (2.0 * p1
                + (-p0 + p2) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
        })
        .collect()
}
