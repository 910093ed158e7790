use std::fmt;

use serde::{Deserialize, Serialize};

use super::SignalError;

pub const NUM_CONDITIONS: usize = 48;
pub const NUM_CLASSES: usize = 6;
pub const MAX_SEVERITY: u8 = 8;

/// Class names, which are also the channel order of every recording.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["HA", "HB", "HC", "LA", "LB", "LC"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Hv,
    Lv,
}

impl Side {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Self {
        match self {
            Side::Hv => Side::Lv,
            Side::Lv => Side::Hv,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Hv => "HV",
            Side::Lv => "LV",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SignalError> {
        match s {
            "HV" => Ok(Side::Hv),
            "LV" => Ok(Side::Lv),
            other => Err(SignalError::Parse(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SignalError> {
        match s {
            "A" => Ok(Phase::A),
            "B" => Ok(Phase::B),
            "C" => Ok(Phase::C),
            other => Err(SignalError::Parse(format!("unknown phase {other:?}"))),
        }
    }
}

/// One of the 48 simulated fault conditions.
///
/// `condition_id = 24·side + 8·phase + (severity − 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultCondition {
    pub side: Side,
    pub phase: Phase,
    pub severity: u8,
}

impl FaultCondition {
    pub fn new(side: Side, phase: Phase, severity: u8) -> Result<Self, SignalError> {
        if !(1..=MAX_SEVERITY).contains(&severity) {
            return Err(SignalError::InvalidCondition(format!(
                "severity {severity} outside 1..={MAX_SEVERITY}"
            )));
        }
        Ok(Self { side, phase, severity })
    }

    pub fn from_id(id: usize) -> Result<Self, SignalError> {
        if id >= NUM_CONDITIONS {
            return Err(SignalError::InvalidCondition(format!("condition id {id} out of range")));
        }
        let side = if id / 24 == 0 { Side::Hv } else { Side::Lv };
        let phase = Phase::ALL[(id / 8) % 3];
        Ok(Self {
            side,
            phase,
            severity: (id % 8) as u8 + 1,
        })
    }

    pub fn id(&self) -> usize {
        self.side.index() * 24 + self.phase.index() * 8 + (self.severity as usize - 1)
    }

    /// Class index in `[HA, HB, HC, LA, LB, LC]`; also the faulted channel.
    pub fn label(&self) -> usize {
        self.side.index() * 3 + self.phase.index()
    }

    pub fn label_name(&self) -> &'static str {
        CLASS_NAMES[self.label()]
    }

    /// Short code such as `LA1`: class name followed by severity.
    pub fn code(&self) -> String {
        format!("{}{}", self.label_name(), self.severity)
    }

    pub fn parse_code(s: &str) -> Result<Self, SignalError> {
        let bad = || SignalError::Parse(format!("bad condition code {s:?} (expected e.g. LA1)"));
        let (class, sev) = s.split_at_checked(2).ok_or_else(bad)?;
        let label = CLASS_NAMES.iter().position(|&c| c == class).ok_or_else(bad)?;
        let severity: u8 = sev.parse().map_err(|_| bad())?;
        let side = if label < 3 { Side::Hv } else { Side::Lv };
        Self::new(side, Phase::ALL[label % 3], severity)
    }

    /// All conditions in id order.
    pub fn all() -> Vec<FaultCondition> {
        (0..NUM_CONDITIONS).map(|id| Self::from_id(id).expect("id in range")).collect()
    }
}

impl fmt::Display for FaultCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}-s{}", self.side.as_str(), self.phase.as_str(), self.severity)
    }
}

pub fn channel_index(side: Side, phase: Phase) -> usize {
    side.index() * 3 + phase.index()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn id_is_a_bijection() {
        let all = FaultCondition::all();
        assert_eq!(all.len(), 48);
        let unique: HashSet<_> = all.iter().map(|c| (c.side, c.phase, c.severity)).collect();
        assert_eq!(unique.len(), 48);
        for (id, c) in all.iter().enumerate() {
            assert_eq!(c.id(), id);
            assert_eq!(FaultCondition::new(c.side, c.phase, c.severity).unwrap(), *c);
        }
        assert!(FaultCondition::from_id(48).is_err());
        assert!(FaultCondition::new(Side::Hv, Phase::A, 0).is_err());
        assert!(FaultCondition::new(Side::Hv, Phase::A, 9).is_err());
    }

    #[test]
    fn codes_round_trip() {
        for c in FaultCondition::all() {
            assert_eq!(FaultCondition::parse_code(&c.code()).unwrap(), c);
        }
        assert_eq!(FaultCondition::parse_code("LA1").unwrap().id(), 24);
        for bad in ["", "L", "XA1", "LA0", "LA9", "LAx"] {
            assert!(FaultCondition::parse_code(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn labels_follow_side_and_phase() {
        let la = FaultCondition::new(Side::Lv, Phase::A, 3).unwrap();
        assert_eq!(la.label_name(), "LA");
        assert_eq!(la.label(), 3);
        let hc = FaultCondition::new(Side::Hv, Phase::C, 8).unwrap();
        assert_eq!(hc.label_name(), "HC");
        let per_label = FaultCondition::all().iter().fold([0; 6], |mut acc, c| {
            acc[c.label()] += 1;
            acc
        });
        assert_eq!(per_label, [8; 6]);
    }
}
