use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CaseRecord, Density, Finding, Laterality, TriageLabel, View};
use super::{PipelineError, Result};
use crate::diffcore::ParamSet;
use crate::imaging::{load_png16, preprocess, PreprocessedImage};
use crate::models::Network;

/// One scored view, or one breast when `view` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub study_id: String,
    pub laterality: Laterality,
    pub view: Option<View>,
    pub score: f64,
    pub label: TriageLabel,
    pub density: Density,
    pub findings: Vec<Finding>,
}

impl PredictionRecord {
    /// `Some(true)` for positives, `None` for excluded records.
    pub fn truth(&self) -> Option<bool> {
        self.label.as_bool()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFailure {
    pub patient_id: String,
    pub study_id: String,
    pub laterality: Laterality,
    pub view: View,
    pub image_path: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ViewPredictions {
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<PredictionFailure>,
}

/// Scores every view independently. A view whose image cannot be produced is
/// reported in `failures` and the rest still run. Output keeps manifest order.
pub fn predict_views_with(
    net: &Network,
    params: &ParamSet<f64>,
    records: &[CaseRecord],
    load: impl Fn(&CaseRecord) -> Result<PreprocessedImage<f64>> + Sync,
) -> ViewPredictions {
    let outcomes: Vec<std::result::Result<PredictionRecord, PredictionFailure>> = records
        .par_iter()
        .map(|r| {
            let scored = load(r).and_then(|img| Ok(net.predict(params, &img)?));
            match scored {
                Ok(score) => Ok(PredictionRecord {
                    patient_id: r.patient_id.clone(),
                    study_id: r.study_id.clone(),
                    laterality: r.laterality,
                    view: Some(r.view),
                    score,
                    label: r.label(),
                    density: r.density,
                    findings: r.findings.clone(),
                }),
                Err(e) => Err(PredictionFailure {
                    patient_id: r.patient_id.clone(),
                    study_id: r.study_id.clone(),
                    laterality: r.laterality,
                    view: r.view,
                    image_path: r.image_path.clone(),
                    error: e.to_string(),
                }),
            }
        })
        .collect();
    let mut out = ViewPredictions::default();
    for o in outcomes {
        match o {
            Ok(r) => out.records.push(r),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

/// Loads 16-bit PNGs (paths relative to `root`) and preprocesses them to the
/// network's input size.
pub fn predict_views(net: &Network, params: &ParamSet<f64>, records: &[CaseRecord], root: &Path) -> ViewPredictions {
    let (h, w) = (net.config().input_height, net.config().input_width);
    predict_views_with(net, params, records, |r| {
        let raw = load_png16(root.join(&r.image_path))?;
        Ok(preprocess(&raw, h, w)?)
    })
}

/// Breast score is the maximum over available view scores. The breast is
/// positive if any view is, else negative if any view is, else excluded.
/// Output is sorted by (patient, study, laterality).
pub fn aggregate_breast(views: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
    let mut groups: BTreeMap<(&str, &str, Laterality), Vec<&PredictionRecord>> = BTreeMap::new();
    for v in views {
        groups.entry((v.patient_id.as_str(), v.study_id.as_str(), v.laterality)).or_default().push(v);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((patient, study, lat), members) in groups {
        let score = members
            .iter()
            .map(|m| m.score)
            .filter(|s| s.is_finite())
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
            .ok_or_else(|| PipelineError::Aggregation(format!("{patient}/{study}/{lat:?} has no scoreable view")))?;
        let labels: BTreeSet<TriageLabel> = members.iter().map(|m| m.label).collect();
        let label = if labels.contains(&TriageLabel::Positive) {
            TriageLabel::Positive
        } else if labels.contains(&TriageLabel::Negative) {
            TriageLabel::Negative
        } else {
            TriageLabel::Excluded
        };
        let density = members.iter().map(|m| m.density).filter(|d| *d != Density::NR).min().unwrap_or(Density::NR);
        let findings: BTreeSet<Finding> = members.iter().flat_map(|m| m.findings.iter().copied()).collect();
        out.push(PredictionRecord {
            patient_id: patient.to_string(),
            study_id: study.to_string(),
            laterality: lat,
            view: None,
            score,
            label,
            density,
            findings: findings.into_iter().collect(),
        });
    }
    Ok(out)
}

pub const PREDICTION_HEADER: [&str; 8] =
    ["patient_id", "study_id", "laterality", "view", "score", "label", "density", "findings"];

#[derive(Serialize, Deserialize)]
struct Row {
    patient_id: String,
    study_id: String,
    laterality: Laterality,
    view: Option<View>,
    score: f64,
    label: String,
    density: Density,
    findings: String,
}

pub fn write_predictions(records: &[PredictionRecord], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(Row {
            patient_id: r.patient_id.clone(),
            study_id: r.study_id.clone(),
            laterality: r.laterality,
            view: r.view,
            score: r.score,
            label: r.label.as_str().into(),
            density: r.density,
            findings: r.findings.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(";"),
        })
        .map_err(|e| PipelineError::Parse(e.to_string()))?;
    }
    if records.is_empty() {
        csv.write_record(PREDICTION_HEADER).map_err(|e| PipelineError::Parse(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_predictions(r: impl Read) -> Result<Vec<PredictionRecord>> {
    let mut csv = csv::Reader::from_reader(r);
    let header: Vec<String> = csv.headers().map_err(|e| PipelineError::Parse(e.to_string()))?.iter().map(String::from).collect();
    if header != PREDICTION_HEADER {
        return Err(PipelineError::Parse(format!("unexpected prediction header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| PipelineError::Parse(format!("row {}: {e}", i + 2)))?;
        if !(0.0..=1.0).contains(&row.score) {
            return Err(PipelineError::Parse(format!("row {}: score {} outside [0, 1]", i + 2, row.score)));
        }
        let findings = row
            .findings
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Finding>>>()?;
        out.push(PredictionRecord {
            patient_id: row.patient_id,
            study_id: row.study_id,
            laterality: row.laterality,
            view: row.view,
            score: row.score,
            label: row.label.parse()?,
            density: row.density,
            findings,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(p: &str, lat: Laterality, v: View, score: f64, label: TriageLabel) -> PredictionRecord {
        PredictionRecord {
            patient_id: p.into(),
            study_id: "s".into(),
            laterality: lat,
            view: Some(v),
            score,
            label,
            density: Density::C,
            findings: vec![],
        }
    }

    #[test]
    fn breast_score_is_max() {
        use Laterality::*;
        use TriageLabel::*;
        let recs = [view("a", L, View::CC, 0.3, Positive), view("a", L, View::MLO, 0.7, Positive)];
        assert_eq!(aggregate_breast(&recs).unwrap()[0].score, 0.7);
        assert_eq!(aggregate_breast(&recs[..1]).unwrap()[0].score, 0.3);
        let same = [view("a", L, View::CC, 0.5, Negative), view("a", L, View::MLO, 0.5, Negative)];
        assert_eq!(aggregate_breast(&same).unwrap()[0].score, 0.5);
        let nan = [view("a", L, View::CC, f64::NAN, Negative)];
        assert!(aggregate_breast(&nan).is_err());
        let mixed = [view("a", R, View::CC, 0.2, Excluded), view("a", R, View::MLO, 0.1, Negative)];
        let b = aggregate_breast(&mixed).unwrap();
        assert_eq!((b[0].label, b[0].view), (Negative, None));
    }

    #[test]
    fn csv_round_trip() {
        let mut r = view("p,1", Laterality::R, View::MLO, 0.123456789012345, TriageLabel::Excluded);
        r.findings = vec![Finding::Mass, Finding::Calcification];
        let mut b = r.clone();
        b.view = None;
        let mut buf = Vec::new();
        write_predictions(&[r.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("patient_id,study_id,laterality,view,score,label,density,findings\n"));
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), vec![r, b]);
        let mut empty = Vec::new();
        write_predictions(&[], &mut empty).unwrap();
        assert!(read_predictions(empty.as_slice()).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn aggregation_is_max_and_order_free(scores in prop::collection::vec(0.0f64..1.0, 1..12), rot in 0usize..12) {
            let views: Vec<_> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let lat = if i % 2 == 0 { Laterality::L } else { Laterality::R };
                    view(&format!("p{}", i / 4), lat, if i % 4 < 2 { View::CC } else { View::MLO }, s, TriageLabel::Negative)
                })
                .collect();
            let a = aggregate_breast(&views).unwrap();
            for b in &a {
                let m = views
                    .iter()
                    .filter(|v| v.patient_id == b.patient_id && v.laterality == b.laterality)
                    .map(|v| v.score)
                    .fold(f64::MIN, f64::max);
                prop_assert_eq!(b.score, m);
            }
            let mut rotated = views.clone();
            rotated.rotate_left(rot % views.len());
            prop_assert_eq!(aggregate_breast(&rotated).unwrap(), a.clone());
            prop_assert_eq!(aggregate_breast(&a).unwrap(), a);
        }
    }
}
