use serde::{Deserialize, Serialize};

use super::condition::NUM_CLASSES;
use super::generate::Recording;
use super::SignalError;

pub const DEFAULT_WINDOW_LEN: usize = 50;
pub const DEFAULT_STRIDE: usize = 25;

/// A `window_len × 6` slice of a recording, stored `[t][channel]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub window: Vec<f64>,
    pub label: usize,
    pub condition_id: usize,
    pub window_start: usize,
    pub poisoned: bool,
}

impl WindowedSample {
    pub fn window_len(&self) -> usize {
        self.window.len() / NUM_CLASSES
    }

    /// Identity of a window across subsets and runs.
    pub fn key(&self) -> (usize, usize) {
        (self.condition_id, self.window_start)
    }
}

/// Start offsets of every full window in a signal of `len` samples.
///
/// A signal shorter than one window yields no starts.
pub fn window_starts(len: usize, window_len: usize, stride: usize) -> Result<Vec<usize>, SignalError> {
    if stride == 0 || window_len == 0 {
        return Err(SignalError::InvalidWindow(format!(
            "window_len {window_len} and stride {stride} must be positive"
        )));
    }
    if stride > window_len {
        return Err(SignalError::InvalidWindow(format!(
            "stride {stride} exceeds window_len {window_len}"
        )));
    }
    if len < window_len {
        return Ok(Vec::new());
    }
    Ok((0..=(len - window_len) / stride).map(|k| k * stride).collect())
}

/// Cuts a recording into full, possibly overlapping windows.
pub fn window_recording(recording: &Recording, window_len: usize, stride: usize) -> Result<Vec<WindowedSample>, SignalError> {
    let len = recording.len();
    if window_len > len {
        return Err(SignalError::InvalidWindow(format!(
            "window_len {window_len} exceeds recording length {len}"
        )));
    }
    let starts = window_starts(len, window_len, stride)?;
    let label = recording.condition.label();
    let condition_id = recording.condition.id();
    Ok(starts
        .into_iter()
        .map(|start| {
            let mut window = Vec::with_capacity(window_len * NUM_CLASSES);
            for t in start..start + window_len {
                window.extend(recording.channels.iter().map(|ch| ch[t]));
            }
            WindowedSample {
                window,
                label,
                condition_id,
                window_start: start,
                poisoned: recording.poisoned,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{FaultCondition, Recording};

    fn ramp(len: usize) -> Recording {
        Recording {
            condition: FaultCondition::from_id(29).unwrap(),
            sample_rate_hz: 1000,
            channels: (0..6).map(|c| (0..len).map(|n| (n * 10 + c) as f64).collect()).collect(),
            poisoned: true,
        }
    }

    #[test]
    fn counts() {
        assert_eq!(window_starts(15_000, 50, 25).unwrap().len(), 599);
        assert_eq!((15_000 - 50) / 25 + 1, 599);
        assert_eq!(window_starts(15_000, 50, 50).unwrap().len(), 300);
        assert_eq!(window_starts(50, 50, 25).unwrap(), vec![0]);
        assert!(window_starts(49, 50, 25).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(window_starts(100, 50, 0).is_err());
        assert!(window_starts(100, 0, 1).is_err());
        assert!(window_starts(100, 10, 11).is_err());
        assert!(window_recording(&ramp(49), 50, 25).is_err());
    }

    #[test]
    fn windows_carry_provenance_and_layout() {
        let r = ramp(120);
        let w = window_recording(&r, 50, 25).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].window_start, 50);
        assert_eq!(w[1].label, r.condition.label());
        assert_eq!(w[1].condition_id, 29);
        assert!(w.iter().all(|s| s.poisoned && s.window_len() == 50));
        // [t][channel] layout: element (t=1, ch=4) of window starting at 25
        assert_eq!(w[1].window[6 + 4], (26 * 10 + 4) as f64);
    }
}
