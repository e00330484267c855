use serde::{Deserialize, Serialize};

/// Confusion counts with malicious as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp_rate: f64,
    pub tn_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Undefined ratios (zero denominators) are reported as 0.
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Metrics {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Metrics { tp, tn, fp, fn_, tp_rate: recall, tn_rate: ratio(tn, tn + fp), precision, recall, f1 }
    }

    /// From `(truth_is_malicious, predicted_malicious)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Metrics {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
            }
        }
        Metrics::from_counts(tp, tn, fp, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Same predictions with the class labels exchanged.
    pub fn swapped(&self) -> Metrics {
        Metrics::from_counts(self.tn, self.tp, self.fn_, self.fp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let m = Metrics::from_counts(1, 1, 0, 0);
        assert_eq!(m.f1, 1.0);
        let m = Metrics::from_counts(2, 0, 1, 1);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_benign_predictions_on_malicious_corpus() {
        let m = Metrics::from_pairs((0..10).map(|_| (true, false)));
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.fn_, 10);
    }

    #[test]
    fn swapping_labels_swaps_counts() {
        let pairs = [(true, true), (true, false), (false, false), (false, false), (false, true)];
        let m = Metrics::from_pairs(pairs);
        let s = Metrics::from_pairs(pairs.iter().map(|&(t, p)| (!t, !p)));
        assert_eq!((s.tp, s.tn, s.fp, s.fn_), (m.tn, m.tp, m.fn_, m.fp));
        assert_eq!(s, m.swapped());
    }
}
