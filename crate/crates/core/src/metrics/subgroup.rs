use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, delong_paired, operating_metrics, roc_auc, BootstrapConfig, CiEstimate, MetricsError, Result};
use crate::pipeline::{density_group, DensityGroup, Finding, Laterality, PredictionRecord, View};

/// How records are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// One subgroup containing every record.
    All,
    /// Non-dense (A/B) and dense (C/D); NR records are left out.
    Density,
    /// One subgroup per lesion type: positives carrying that finding plus all
    /// negatives. A record with several findings joins several subgroups.
    Finding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupModel {
    pub auc: CiEstimate,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub subgroup: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub evaluable: bool,
    pub model_a: Option<SubgroupModel>,
    pub model_b: Option<SubgroupModel>,
    pub delong_p: Option<f64>,
    pub note: Option<String>,
}

/// Scores of both models on one case.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Paired<'a> {
    pub a: &'a PredictionRecord,
    pub b: f64,
    pub truth: bool,
}

type Key<'a> = (&'a str, &'a str, Laterality, Option<View>);

fn key(r: &PredictionRecord) -> Key<'_> {
    (r.patient_id.as_str(), r.study_id.as_str(), r.laterality, r.view)
}

/// Joins the two prediction sets case by case, dropping excluded labels.
pub(crate) fn pair<'a>(a: &'a [PredictionRecord], b: &'a [PredictionRecord]) -> Result<Vec<Paired<'a>>> {
    let by_key: BTreeMap<Key<'_>, &PredictionRecord> = b.iter().map(|r| (key(r), r)).collect();
    if by_key.len() != b.len() || a.len() != b.len() {
        return Err(MetricsError::Invalid("prediction sets must cover the same cases exactly once".into()));
    }
    let mut out = Vec::with_capacity(a.len());
    for r in a {
        let other = by_key
            .get(&key(r))
            .ok_or_else(|| MetricsError::Invalid(format!("case {}/{:?}/{:?} missing from second model", r.patient_id, r.laterality, r.view)))?;
        if other.label != r.label {
            return Err(MetricsError::Invalid(format!("label mismatch for {}", r.patient_id)));
        }
        if let Some(truth) = r.truth() {
            out.push(Paired { a: r, b: other.score, truth });
        }
    }
    Ok(out)
}

fn groups<'a>(cases: &[Paired<'a>], selector: Selector) -> Vec<(String, Vec<Paired<'a>>)> {
    match selector {
        Selector::All => vec![("all".into(), cases.to_vec())],
        Selector::Density => [(DensityGroup::NonDense, "non-dense"), (DensityGroup::Dense, "dense")]
            .into_iter()
            .map(|(g, name)| (name.to_string(), cases.iter().filter(|c| density_group(c.a.density) == g).cloned().collect()))
            .collect(),
        Selector::Finding => Finding::LESIONS
            .into_iter()
            .map(|f| {
                let members = cases.iter().filter(|c| !c.truth || c.a.findings.contains(&f)).cloned().collect();
                (f.as_str().to_string(), members)
            })
            .collect(),
    }
}

fn model_summary(
    cases: &[Paired<'_>],
    score: impl Fn(&Paired<'_>) -> f64 + Sync,
    threshold: f64,
    boot: &BootstrapConfig,
) -> Result<SubgroupModel> {
    let stat = |rs: &[&Paired<'_>]| {
        let s: Vec<f64> = rs.iter().map(|c| score(c)).collect();
        let l: Vec<bool> = rs.iter().map(|c| c.truth).collect();
        roc_auc(&s, &l).ok()
    };
    let auc = bootstrap_ci(cases, |c| c.a.patient_id.clone(), stat, boot)?;
    let s: Vec<f64> = cases.iter().map(&score).collect();
    let l: Vec<bool> = cases.iter().map(|c| c.truth).collect();
    let op = operating_metrics(&s, &l, threshold);
    Ok(SubgroupModel { auc, sensitivity: op.sensitivity, specificity: op.specificity })
}

/// Per-subgroup AUC with patient-level bootstrap CIs, sensitivity and
/// specificity at the fixed thresholds, and the paired DeLong p-value.
pub fn subgroup_eval(
    preds_a: &[PredictionRecord],
    preds_b: &[PredictionRecord],
    selector: Selector,
    thresholds: (f64, f64),
    boot: &BootstrapConfig,
) -> Result<Vec<SubgroupRow>> {
    let cases = pair(preds_a, preds_b)?;
    let mut rows = Vec::new();
    for (name, members) in groups(&cases, selector) {
        let n_pos = members.iter().filter(|c| c.truth).count();
        let n_neg = members.len() - n_pos;
        let mut row = SubgroupRow {
            subgroup: name,
            n_pos,
            n_neg,
            evaluable: n_pos > 0 && n_neg > 0,
            model_a: None,
            model_b: None,
            delong_p: None,
            note: None,
        };
        if !row.evaluable {
            row.note = Some("not evaluable: single class".into());
            rows.push(row);
            continue;
        }
        row.model_a = Some(model_summary(&members, |c| c.a.score, thresholds.0, boot)?);
        row.model_b = Some(model_summary(&members, |c| c.b, thresholds.1, boot)?);
        let sa: Vec<f64> = members.iter().map(|c| c.a.score).collect();
        let sb: Vec<f64> = members.iter().map(|c| c.b).collect();
        let l: Vec<bool> = members.iter().map(|c| c.truth).collect();
        match delong_paired(&sa, &sb, &l) {
            Ok(d) => row.delong_p = Some(d.p),
            Err(e) => row.note = Some(format!("DeLong unavailable: {e}")),
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Density, TriageLabel};

    fn rec(p: usize, score: f64, pos: bool, density: Density, findings: Vec<Finding>) -> PredictionRecord {
        PredictionRecord {
            patient_id: format!("p{p}"),
            study_id: "s".into(),
            laterality: Laterality::L,
            view: None,
            score,
            label: if pos { TriageLabel::Positive } else { TriageLabel::Negative },
            density,
            findings,
        }
    }

    fn toy() -> Vec<PredictionRecord> {
        vec![
            rec(0, 0.9, true, Density::C, vec![Finding::Mass, Finding::Calcification]),
            rec(1, 0.6, true, Density::D, vec![Finding::Mass]),
            rec(2, 0.4, true, Density::A, vec![Finding::Asymmetry]),
            rec(3, 0.3, false, Density::C, vec![]),
            rec(4, 0.7, false, Density::B, vec![]),
            rec(5, 0.1, false, Density::NR, vec![]),
            rec(6, 0.2, false, Density::D, vec![]),
        ]
    }

    fn cfg() -> BootstrapConfig {
        BootstrapConfig { n_resamples: 200, ..BootstrapConfig::new(1) }
    }

    #[test]
    fn density_counts_match_hand_count() {
        let a = toy();
        let rows = subgroup_eval(&a, &a, Selector::Density, (0.5, 0.5), &cfg()).unwrap();
        assert_eq!((rows[0].subgroup.as_str(), rows[0].n_pos, rows[0].n_neg), ("non-dense", 1, 1));
        assert_eq!((rows[1].subgroup.as_str(), rows[1].n_pos, rows[1].n_neg), ("dense", 2, 2));
        assert_eq!(rows[0].delong_p, None);
    }

    #[test]
    fn multi_finding_record_joins_both_subgroups() {
        let a = toy();
        let rows = subgroup_eval(&a, &a, Selector::Finding, (0.5, 0.5), &cfg()).unwrap();
        let get = |n: &str| rows.iter().find(|r| r.subgroup == n).unwrap();
        assert_eq!((get("calcification").n_pos, get("calcification").n_neg), (1, 4));
        assert_eq!(get("mass").n_pos, 2);
        assert_eq!(get("distortion").n_pos, 0);
        assert!(!get("distortion").evaluable);
        assert!(get("distortion").note.is_some());
    }

    #[test]
    fn all_selector_equals_whole_set() {
        let a = toy();
        let mut b = toy();
        b.iter_mut().for_each(|r| r.score = 1.0 - r.score / 2.0);
        let rows = subgroup_eval(&a, &b, Selector::All, (0.5, 0.6), &cfg()).unwrap();
        let s: Vec<f64> = a.iter().map(|r| r.score).collect();
        let l: Vec<bool> = a.iter().map(|r| r.truth().unwrap()).collect();
        assert_eq!(rows[0].model_a.as_ref().unwrap().auc.point, roc_auc(&s, &l).unwrap());
        let op = operating_metrics(&s, &l, 0.5);
        assert_eq!(rows[0].model_a.as_ref().unwrap().sensitivity, op.sensitivity);
        let sb: Vec<f64> = b.iter().map(|r| r.score).collect();
        assert_eq!(rows[0].delong_p, Some(delong_paired(&s, &sb, &l).unwrap().p));
    }

    #[test]
    fn mismatched_sets_rejected() {
        let a = toy();
        assert!(subgroup_eval(&a, &a[1..], Selector::All, (0.5, 0.5), &cfg()).is_err());
    }
}
