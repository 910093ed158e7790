//! Parametric two-side, three-phase current model of a winding fault.
//!
//! Every channel carries its side's base sinusoid. The faulted channel gains a
//! severity-scaled amplitude increase plus 3rd and 5th harmonics; the same
//! phase on the opposite side receives 40% of those terms, and the remaining
//! channels a small share. LV faults couple more strongly into the other LV
//! phases, which makes the LV classes the hardest to separate.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::condition::{channel_index, FaultCondition, Phase, Side, NUM_CLASSES};
use crate::nn::{Purpose, RngKey};

pub const SAMPLE_RATE_HZ: u32 = 1000;
pub const DURATION_S: u32 = 15;
pub const SAMPLES_PER_CHANNEL: usize = (SAMPLE_RATE_HZ * DURATION_S) as usize;
pub const NOMINAL_FREQ_HZ: f64 = 60.0;

/// Peak current per channel in amperes, order `[HA, HB, HC, LA, LB, LC]`.
/// The LV peaks sit within 2% of each other.
pub const NOMINAL_PEAK_A: [f64; NUM_CLASSES] = [100.0, 100.0, 100.0, 1000.0, 1012.0, 993.0];

const AMPLITUDE_STEP: f64 = 0.04;
const THIRD_HARMONIC_STEP: f64 = 0.015;
const FIFTH_HARMONIC_STEP: f64 = 0.008;
const CROSS_SIDE_COUPLING: f64 = 0.40;
const NOISE_FLOOR: f64 = 0.005;

/// Share of the fault terms that reaches a channel.
fn coupling(fault: &FaultCondition, side: Side, phase: Phase) -> f64 {
    let side_gain = match fault.side {
        Side::Hv => 1.0,
        Side::Lv => 0.8,
    };
    let share = match (side == fault.side, phase == fault.phase) {
        (true, true) => 1.0,
        (false, true) => CROSS_SIDE_COUPLING,
        (true, false) => match fault.side {
            Side::Hv => 0.05,
            Side::Lv => 0.15,
        },
        (false, false) => 0.02,
    };
    side_gain * share
}

fn phase_offset(phase: Phase) -> f64 {
    match phase {
        Phase::A => 0.0,
        Phase::B => -2.0 * PI / 3.0,
        Phase::C => 2.0 * PI / 3.0,
    }
}

/// One condition's six current waveforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub condition: FaultCondition,
    pub sample_rate_hz: u32,
    /// Six channels in `[HA, HB, HC, LA, LB, LC]` order.
    pub channels: Vec<Vec<f64>>,
    pub poisoned: bool,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rms(&self, channel: usize) -> f64 {
        let ch = &self.channels[channel];
        (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().flatten().all(|v| v.is_finite())
    }
}

/// Deterministic recording for `(condition, seed)`.
///
/// The random draws (phase jitter and noise) depend only on `seed`, so two
/// conditions generated with the same seed differ only by their fault terms.
pub fn generate_condition(condition: FaultCondition, seed: u64) -> Recording {
    let mut rng = RngKey::new(seed, Purpose::Synth).stream();
    let jitter = rng.random_range(0.0..2.0 * PI);
    let omega = 2.0 * PI * NOMINAL_FREQ_HZ;
    let sev = f64::from(condition.severity);
    let dt = 1.0 / f64::from(SAMPLE_RATE_HZ);

    let mut channels = Vec::with_capacity(NUM_CLASSES);
    for side in [Side::Hv, Side::Lv] {
        for phase in Phase::ALL {
            let ch = channel_index(side, phase);
            let peak = NOMINAL_PEAK_A[ch];
            let k = coupling(&condition, side, phase);
            let amp = peak * (1.0 + k * AMPLITUDE_STEP * sev);
            let h3 = peak * k * THIRD_HARMONIC_STEP * sev;
            let h5 = peak * k * FIFTH_HARMONIC_STEP * sev;
            let theta0 = phase_offset(phase) + jitter;
            let noise = Normal::new(0.0, NOISE_FLOOR * peak).expect("positive std");
            let wave = (0..SAMPLES_PER_CHANNEL)
                .map(|n| {
                    let theta = omega * n as f64 * dt + theta0;
                    amp * theta.sin() + h3 * (3.0 * theta).sin() + h5 * (5.0 * theta).sin() + noise.sample(&mut rng)
                })
                .collect();
            channels.push(wave);
        }
    }
    Recording {
        condition,
        sample_rate_hz: SAMPLE_RATE_HZ,
        channels,
        poisoned: false,
    }
}

/// Per-condition seed used when generating a whole dataset from one root seed.
pub fn condition_seed(root: u64, condition_id: usize) -> u64 {
    let mut h = crate::fnv::Fnv64::new();
    h.write(&root.to_le_bytes());
    h.write(&(condition_id as u64).to_le_bytes());
    h.finish()
}

/// All 48 clean recordings.
pub fn generate_all(root: u64) -> Vec<Recording> {
    FaultCondition::all()
        .into_iter()
        .map(|c| generate_condition(c, condition_seed(root, c.id())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(side: Side, phase: Phase, sev: u8) -> FaultCondition {
        FaultCondition::new(side, phase, sev).unwrap()
    }

    #[test]
    fn shape_and_finiteness() {
        let r = generate_condition(cond(Side::Hv, Phase::A, 1), 7);
        assert_eq!(r.channels.len(), 6);
        assert!(r.channels.iter().all(|c| c.len() == 15_000));
        assert!(r.is_finite());
        assert!(!r.poisoned);
    }

    #[test]
    fn fundamental_is_nominal_frequency() {
        // Project channel HB onto 55/60/65 Hz; 60 Hz must dominate.
        let r = generate_condition(cond(Side::Hv, Phase::A, 1), 7);
        let ch = &r.channels[1];
        let power = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in ch.iter().enumerate() {
                let a = 2.0 * PI * f * n as f64 / 1000.0;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        };
        let p60 = power(60.0);
        assert!(p60 > 100.0 * power(55.0));
        assert!(p60 > 100.0 * power(65.0));
    }

    #[test]
    fn bitwise_deterministic() {
        let c = cond(Side::Lv, Phase::B, 4);
        assert_eq!(generate_condition(c, 11), generate_condition(c, 11));
        assert_ne!(generate_condition(c, 11), generate_condition(c, 12));
    }

    #[test]
    fn fault_channel_rms_grows_with_severity() {
        let low = generate_condition(cond(Side::Lv, Phase::A, 1), 3);
        let high = generate_condition(cond(Side::Lv, Phase::A, 8), 3);
        let la = channel_index(Side::Lv, Phase::A);
        assert!(high.rms(la) > low.rms(la));
        for side in [Side::Hv, Side::Lv] {
            for phase in Phase::ALL {
                let ch = channel_index(side, phase);
                let rms: Vec<f64> = (1..=8)
                    .map(|s| generate_condition(cond(side, phase, s), 5).rms(ch))
                    .collect();
                assert!(rms.windows(2).all(|w| w[1] >= w[0]), "{side:?}{phase:?}: {rms:?}");
            }
        }
    }

    #[test]
    fn fault_terms_land_on_the_faulted_channel() {
        let r = generate_condition(cond(Side::Hv, Phase::C, 8), 2);
        let rel: Vec<f64> = (0..6).map(|ch| r.rms(ch) / (NOMINAL_PEAK_A[ch] / 2f64.sqrt())).collect();
        let hc = channel_index(Side::Hv, Phase::C);
        let lc = channel_index(Side::Lv, Phase::C);
        let top = rel.iter().cloned().fold(0.0, f64::max);
        assert_eq!(rel[hc], top);
        // coupled channel sits between the faulted and the untouched ones
        assert!(rel[lc] > rel[0] && rel[lc] < rel[hc]);
    }
}
