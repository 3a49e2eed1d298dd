use serde::{Deserialize, Serialize};

use crate::nn::ConfusionMatrix;

/// Accuracy, and for two classes precision, recall and specificity of the
/// positive class, all in percent. A metric with a zero denominator is
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Metrics of one confusion matrix (`[truth][prediction]`).
pub fn session_metrics(c: &ConfusionMatrix, positive: usize) -> Metrics {
    let accuracy = c.accuracy();
    if c.n_classes != 2 || positive > 1 {
        return Metrics {
            accuracy,
            precision: None,
            recall: None,
            specificity: None,
        };
    }
    let neg = 1 - positive;
    let tp = c.counts[positive][positive];
    let fn_ = c.counts[positive][neg];
    let fp = c.counts[neg][positive];
    let tn = c.counts[neg][neg];
    Metrics {
        accuracy,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    }
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let d: Vec<f64> = v.flatten().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Uniform average of per-session metrics; sessions where a metric is
/// undefined are left out of that metric's average.
pub fn average_metrics(per_session: &[Metrics]) -> Metrics {
    Metrics {
        accuracy: mean_defined(per_session.iter().map(|m| m.accuracy)),
        precision: mean_defined(per_session.iter().map(|m| m.precision)),
        recall: mean_defined(per_session.iter().map(|m| m.recall)),
        specificity: mean_defined(per_session.iter().map(|m| m.specificity)),
    }
}

/// Averages over sessions `1..=n_s` and the metrics of session `n_s`.
pub fn metrics(confusions: &[ConfusionMatrix], n_s: usize, positive: usize) -> (Metrics, Metrics) {
    let per: Vec<Metrics> = confusions[..n_s].iter().map(|c| session_metrics(c, positive)).collect();
    (average_metrics(&per), per[n_s - 1])
}
