use std::io::Write;

use serde::{Deserialize, Serialize};

use super::subgroup::{pair, Paired};
use super::{
    bootstrap_ci, delong_paired, mcnemar, operating_metrics, roc_auc, roc_curve, BootstrapConfig, CiEstimate,
    DelongResult, McnemarResult, MetricsError, OperatingPoint, Result, RocPoint, RocResult,
};
use crate::pipeline::PredictionRecord;

/// Which data fixed the decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Youden threshold from the development validation split, reused here.
    Validation,
    /// Youden threshold recomputed on this cohort.
    Cohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub auc: CiEstimate,
    pub threshold: f64,
    pub operating_point: OperatingPoint,
    /// Bootstrap CIs for the threshold metrics; `None` when the metric was
    /// undefined on the full data or on too many replicates.
    pub accuracy_ci: Option<CiEstimate>,
    pub sensitivity_ci: Option<CiEstimate>,
    pub specificity_ci: Option<CiEstimate>,
    pub ppv_ci: Option<CiEstimate>,
    pub npv_ci: Option<CiEstimate>,
    pub f1_ci: Option<CiEstimate>,
    pub balanced_accuracy_ci: Option<CiEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub delong: Option<DelongResult>,
    pub delong_note: Option<String>,
    /// Bootstrap CI of `auc_b - auc_a` from shared patient resamples.
    pub delta_auc: CiEstimate,
    pub delta_sensitivity: Option<CiEstimate>,
    pub delta_specificity: Option<CiEstimate>,
    pub mcnemar: McnemarResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub cohort: String,
    pub threshold_source: ThresholdSource,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_excluded: usize,
    pub model_a: ModelSummary,
    pub model_b: ModelSummary,
    pub comparison: PairedComparison,
    #[serde(skip)]
    pub roc_a: Option<RocResult>,
    #[serde(skip)]
    pub roc_b: Option<RocResult>,
}

fn metric_ci(
    cases: &[Paired<'_>],
    score: &(impl Fn(&Paired<'_>) -> f64 + Sync),
    threshold: f64,
    pick: fn(&OperatingPoint) -> Option<f64>,
    boot: &BootstrapConfig,
) -> Option<CiEstimate> {
    let stat = |rs: &[&Paired<'_>]| {
        let s: Vec<f64> = rs.iter().map(|c| score(c)).collect();
        let l: Vec<bool> = rs.iter().map(|c| c.truth).collect();
        pick(&operating_metrics(&s, &l, threshold))
    };
    bootstrap_ci(cases, |c| c.a.patient_id.clone(), stat, boot).ok()
}

fn summarize(
    name: &str,
    cases: &[Paired<'_>],
    score: impl Fn(&Paired<'_>) -> f64 + Sync,
    threshold: f64,
    boot: &BootstrapConfig,
) -> Result<(ModelSummary, RocResult)> {
    let s: Vec<f64> = cases.iter().map(&score).collect();
    let l: Vec<bool> = cases.iter().map(|c| c.truth).collect();
    let roc = roc_curve(&s, &l)?;
    let auc_stat = |rs: &[&Paired<'_>]| {
        let s: Vec<f64> = rs.iter().map(|c| score(c)).collect();
        let l: Vec<bool> = rs.iter().map(|c| c.truth).collect();
        roc_auc(&s, &l).ok()
    };
    let auc = bootstrap_ci(cases, |c| c.a.patient_id.clone(), auc_stat, boot)?;
    let summary = ModelSummary {
        name: name.to_string(),
        auc,
        threshold,
        operating_point: operating_metrics(&s, &l, threshold),
        accuracy_ci: metric_ci(cases, &score, threshold, |o| o.accuracy, boot),
        sensitivity_ci: metric_ci(cases, &score, threshold, |o| o.sensitivity, boot),
        specificity_ci: metric_ci(cases, &score, threshold, |o| o.specificity, boot),
        ppv_ci: metric_ci(cases, &score, threshold, |o| o.ppv, boot),
        npv_ci: metric_ci(cases, &score, threshold, |o| o.npv, boot),
        f1_ci: metric_ci(cases, &score, threshold, |o| o.f1, boot),
        balanced_accuracy_ci: metric_ci(cases, &score, threshold, |o| o.balanced_accuracy, boot),
    };
    Ok((summary, roc))
}

/// Table-style comparison of two models on one cohort at fixed thresholds.
pub fn cohort_report(
    cohort: &str,
    names: (&str, &str),
    preds_a: &[PredictionRecord],
    preds_b: &[PredictionRecord],
    thresholds: (f64, f64),
    threshold_source: ThresholdSource,
    boot: &BootstrapConfig,
) -> Result<CohortReport> {
    let cases = pair(preds_a, preds_b)?;
    let n_pos = cases.iter().filter(|c| c.truth).count();
    let n_neg = cases.len() - n_pos;
    let (model_a, roc_a) = summarize(names.0, &cases, |c| c.a.score, thresholds.0, boot)?;
    let (model_b, roc_b) = summarize(names.1, &cases, |c| c.b, thresholds.1, boot)?;
    let sa: Vec<f64> = cases.iter().map(|c| c.a.score).collect();
    let sb: Vec<f64> = cases.iter().map(|c| c.b).collect();
    let l: Vec<bool> = cases.iter().map(|c| c.truth).collect();
    let (delong, delong_note) = match delong_paired(&sa, &sb, &l) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let delta_auc = bootstrap_ci(
        &cases,
        |c| c.a.patient_id.clone(),
        |rs| {
            let a: Vec<f64> = rs.iter().map(|c| c.a.score).collect();
            let b: Vec<f64> = rs.iter().map(|c| c.b).collect();
            let l: Vec<bool> = rs.iter().map(|c| c.truth).collect();
            Some(roc_auc(&b, &l).ok()? - roc_auc(&a, &l).ok()?)
        },
        boot,
    )?;
    let delta = |pick: fn(&OperatingPoint) -> Option<f64>| {
        bootstrap_ci(
            &cases,
            |c| c.a.patient_id.clone(),
            |rs| {
                let a: Vec<f64> = rs.iter().map(|c| c.a.score).collect();
                let b: Vec<f64> = rs.iter().map(|c| c.b).collect();
                let l: Vec<bool> = rs.iter().map(|c| c.truth).collect();
                Some(pick(&operating_metrics(&b, &l, thresholds.1))? - pick(&operating_metrics(&a, &l, thresholds.0))?)
            },
            boot,
        )
        .ok()
    };
    let calls_a: Vec<bool> = sa.iter().map(|&s| s >= thresholds.0).collect();
    let calls_b: Vec<bool> = sb.iter().map(|&s| s >= thresholds.1).collect();
    let comparison = PairedComparison {
        delong,
        delong_note,
        delta_auc,
        delta_sensitivity: delta(|o| o.sensitivity),
        delta_specificity: delta(|o| o.specificity),
        mcnemar: mcnemar(&calls_a, &calls_b, &l)?,
    };
    Ok(CohortReport {
        cohort: cohort.to_string(),
        threshold_source,
        n_pos,
        n_neg,
        n_excluded: preds_a.len() - cases.len(),
        model_a,
        model_b,
        comparison,
        roc_a: Some(roc_a),
        roc_b: Some(roc_b),
    })
}

/// `fpr,tpr,threshold` rows; the leading point's threshold is written as `inf`.
pub fn write_roc_csv(curve: &[RocPoint], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| MetricsError::Invalid(e.to_string());
    csv.write_record(["fpr", "tpr", "threshold"]).map_err(err)?;
    for p in curve {
        let t = if p.threshold.is_infinite() { "inf".to_string() } else { p.threshold.to_string() };
        csv.write_record([p.fpr.to_string(), p.tpr.to_string(), t]).map_err(err)?;
    }
    csv.flush().map_err(|e| MetricsError::Invalid(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Density, Laterality, TriageLabel};
    use rand::{Rng, SeedableRng};

    fn preds(seed: u64, shift: f64) -> Vec<PredictionRecord> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut noise = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..80)
            .map(|i| {
                let pos = rng.random_bool(0.4);
                let raw: f64 = noise.random::<f64>() * 0.7 + if pos { shift } else { 0.0 };
                PredictionRecord {
                    patient_id: format!("p{}", i / 2),
                    study_id: "s".into(),
                    laterality: if i % 2 == 0 { Laterality::L } else { Laterality::R },
                    view: None,
                    score: raw.min(1.0),
                    label: if i == 5 { TriageLabel::Excluded } else if pos { TriageLabel::Positive } else { TriageLabel::Negative },
                    density: Density::C,
                    findings: vec![],
                }
            })
            .collect()
    }

    #[test]
    fn report_fields_are_consistent() {
        let (a, b) = (preds(1, 0.1), preds(2, 0.3));
        let boot = BootstrapConfig { n_resamples: 200, ..BootstrapConfig::new(3) };
        let r = cohort_report("synthetic", ("gray", "tdce"), &a, &b, (0.5, 0.5), ThresholdSource::Validation, &boot).unwrap();
        assert_eq!(r.n_excluded, 1);
        assert_eq!(r.n_pos + r.n_neg, 79);
        let d = r.comparison.delong.as_ref().unwrap();
        assert!((d.auc_a - r.model_a.auc.point).abs() < 1e-12);
        assert!((r.comparison.delta_auc.point - d.delta).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["threshold_source"], "validation");
        let mut buf = Vec::new();
        write_roc_csv(&r.roc_a.unwrap().curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }
}
