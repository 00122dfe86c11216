//! Object-level precision and recall.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::simulator::GtLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// Set when a ratio had a zero denominator and was reported as 1.0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            precision: precision.unwrap_or(1.0),
            recall: recall.unwrap_or(1.0),
            degenerate: precision.is_none() || recall.is_none(),
        }
    }
}

/// Scores the set of objects flagged changed against ground-truth labels.
/// Flags on ids without a label are ignored.
pub fn compute_metrics(flagged: &BTreeSet<u64>, labels: &BTreeMap<u64, GtLabel>) -> Metrics {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (id, label) in labels {
        match (flagged.contains(id), label.is_changed()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Metrics::from_counts(tp, fp, fn_)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let m = Metrics::from_counts(12, 0, 0);
        assert_eq!((m.precision, m.recall, m.degenerate), (1.0, 1.0, false));
        let m = Metrics::from_counts(8, 4, 4);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12 && (m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{:.1}", 100.0 * m.precision), "66.7");
        let m = Metrics::from_counts(0, 0, 0);
        assert_eq!((m.precision, m.recall, m.degenerate), (1.0, 1.0, true));
    }

    #[test]
    fn counts_against_labels() {
        let labels: BTreeMap<u64, GtLabel> = [
            (0, GtLabel::Unchanged),
            (1, GtLabel::Moved),
            (2, GtLabel::Removed),
            (3, GtLabel::Added),
            (4, GtLabel::Unchanged),
        ]
        .into();
        let flagged: BTreeSet<u64> = [1, 2, 4, 99].into();
        let m = compute_metrics(&flagged, &labels);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
    }
}
