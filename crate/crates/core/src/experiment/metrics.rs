use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::signal::{CLASS_NAMES, NUM_CLASSES};

/// Raw counts, rows = true label, columns = predicted label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::default();
        for (truth, pred) in pairs {
            m.counts[truth][pred] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Fraction correct; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Per-class recall; `None` for classes absent from the test set.
    pub fn recall(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|i| {
            let row: u64 = self.counts[i].iter().sum();
            (row > 0).then(|| self.counts[i][i] as f64 / row as f64)
        })
    }

    /// Rows scaled to sum to one; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        std::array::from_fn(|i| {
            let row: u64 = self.counts[i].iter().sum();
            std::array::from_fn(|j| if row == 0 { 0.0 } else { self.counts[i][j] as f64 / row as f64 })
        })
    }

    /// Count table with class names as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in CLASS_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in CLASS_NAMES.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                write!(out, ",{c}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::from_pairs([(0, 0), (3, 0), (3, 3), (5, 5)]);
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\pred,HA,HB,HC,LA,LB,LC");
        assert_eq!(lines[4], "LA,1,0,0,1,0,0");
        assert_eq!(lines.len(), 7);
        assert_eq!(m.recall()[3], Some(0.5));
        assert_eq!(m.recall()[1], None);
        assert_eq!(m.accuracy(), 0.75);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    proptest! {
        #[test]
        fn counts_and_rows_are_consistent(pairs in prop::collection::vec((0usize..6, 0usize..6), 0..300)) {
            let m = ConfusionMatrix::from_pairs(pairs.iter().copied());
            prop_assert_eq!(m.total(), pairs.len() as u64);
            let exact = pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len().max(1) as f64;
            prop_assert!((m.accuracy() - exact).abs() < 1e-15);
            for (i, row) in m.normalized().iter().enumerate() {
                let s: f64 = row.iter().sum();
                if m.counts[i].iter().sum::<u64>() > 0 {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }
    }
}
