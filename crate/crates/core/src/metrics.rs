//! Confusion-matrix metrics with churn as the positive class, and
//! mean-plus-std aggregation across random seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// Tallies predictions against labels: predict churn iff `p >= threshold`.
pub fn confusion(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probabilities.len(),
            right: labels.len(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold must lie strictly between 0 and 1"));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        let predicted = p >= threshold;
        match (predicted, y == 1) {
            (true, true) => counts.true_positives += 1,
            (true, false) => counts.false_positives += 1,
            (false, false) => counts.true_negatives += 1,
            (false, true) => counts.false_negatives += 1,
        }
    }
    Ok(counts)
}

/// Precision, recall and accuracy. A zero denominator yields `None`, an
/// explicit undefined marker, never a conventional zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsValues {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: f64,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> Result<MetricsValues> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MetricsValues {
        precision: ratio(
            counts.true_positives,
            counts.true_positives + counts.false_positives,
        ),
        recall: ratio(
            counts.true_positives,
            counts.true_positives + counts.false_negatives,
        ),
        accuracy: (counts.true_positives + counts.true_negatives) as f64 / total as f64,
    })
}

/// One evaluation run: counts, derived metrics, and the (threshold, seed)
/// that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub metrics: MetricsValues,
    pub threshold: f64,
    pub seed: u64,
}

/// Scores a probability vector against labels and assembles the full report.
pub fn evaluate(
    probabilities: &[f64],
    labels: &[u8],
    threshold: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let counts = confusion(probabilities, labels, threshold)?;
    let metrics = compute_metrics(&counts)?;
    Ok(MetricsReport {
        counts,
        metrics,
        threshold,
        seed,
    })
}

/// Mean and sample standard deviation of one metric across seeds. Undefined
/// per-seed values are skipped and counted; the deviation needs at least two
/// defined values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateValue {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub skipped: usize,
}

impl AggregateValue {
    fn from_values(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
        let skipped = values.len() - defined.len();
        if defined.is_empty() {
            return AggregateValue {
                mean: None,
                std: None,
                defined: 0,
                skipped,
            };
        }
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        let std = if defined.len() >= 2 {
            let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (defined.len() - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        AggregateValue {
            mean: Some(mean),
            std,
            defined: defined.len(),
            skipped,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub precision: AggregateValue,
    pub recall: AggregateValue,
    pub accuracy: AggregateValue,
    pub threshold: f64,
    pub seeds: usize,
}

/// Aggregates reports from different seeds evaluated at the same threshold.
pub fn aggregate_over_seeds(reports: &[MetricsReport]) -> Result<SeedAggregate> {
    let Some(first) = reports.first() else {
        return Err(Error::Aggregation("no reports to aggregate".into()));
    };
    if reports.iter().any(|r| r.threshold != first.threshold) {
        return Err(Error::Aggregation(
            "reports were evaluated at different thresholds".into(),
        ));
    }
    let precision: Vec<Option<f64>> = reports.iter().map(|r| r.metrics.precision).collect();
    let recall: Vec<Option<f64>> = reports.iter().map(|r| r.metrics.recall).collect();
    let accuracy: Vec<Option<f64>> = reports.iter().map(|r| Some(r.metrics.accuracy)).collect();
    Ok(SeedAggregate {
        precision: AggregateValue::from_values(&precision),
        recall: AggregateValue::from_values(&recall),
        accuracy: AggregateValue::from_values(&accuracy),
        threshold: first.threshold,
        seeds: reports.len(),
    })
}

/// `mean ± std` with six decimals, `n/a` where undefined.
pub fn format_mean_std(value: &AggregateValue) -> String {
    match (value.mean, value.std) {
        (Some(mean), Some(std)) => format!("{mean:.6} ± {std:.6}"),
        (Some(mean), None) => format!("{mean:.6} ± n/a"),
        (None, _) => "n/a".to_string(),
    }
}
