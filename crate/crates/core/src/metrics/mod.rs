//! Diagnostic-accuracy statistics. Labels are `true` for positive cases and a
//! case is called positive when `score >= threshold`.

mod bootstrap;
mod delong;
mod mcnemar;
mod report;
mod roc;
mod subgroup;

use thiserror::Error;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapConfig, CiEstimate};
pub use delong::{delong_paired, placement_values, DelongResult, Placements};
pub use mcnemar::{mcnemar, mcnemar_counts, McnemarMethod, McnemarResult};
pub use report::{
    cohort_report, write_roc_csv, CohortReport, ModelSummary, PairedComparison, ThresholdSource,
};
pub use roc::{operating_metrics, roc_auc, roc_curve, youden_threshold, OperatingPoint, RocPoint, RocResult};
pub use subgroup::{subgroup_eval, Selector, SubgroupModel, SubgroupRow};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least one positive and one negative case (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("need at least {needed} cases per class (got {positives} positive, {negatives} negative)")]
    TooFewCases { needed: usize, positives: usize, negatives: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("zero variance for a nonzero AUC difference ({delta})")]
    DegenerateVariance { delta: f64 },
    #[error("statistic is undefined on the full data")]
    UndefinedStatistic,
    #[error("bootstrap gave up after {0} consecutive undefined replicates")]
    TooManyRedraws(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub(crate) fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Two-sided standard-normal tail probability.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}
