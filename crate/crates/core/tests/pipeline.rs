use std::collections::{BTreeMap, BTreeSet};

use mammocolor::pipeline::{aggregate_breast, split_patients, Birads, CaseRecord, Density, Finding, Laterality, PredictionRecord, TriageLabel, View};
use proptest::prelude::*;

fn record(patient: usize, study: usize, lat: Laterality, view: View, birads: u8) -> CaseRecord {
    CaseRecord {
        patient_id: format!("P{patient:03}"),
        study_id: format!("P{patient:03}-S{study}"),
        laterality: lat,
        view,
        birads: Birads::new(birads, (birads == 4).then_some('A')).unwrap(),
        density: Density::B,
        findings: vec![],
        image_path: format!("{patient}_{study}_{lat:?}_{view:?}.png"),
        extra: Default::default(),
    }
}

/// Patients with one to three studies and a random subset of views each.
fn manifest() -> impl Strategy<Value = Vec<CaseRecord>> {
    prop::collection::vec((1usize..4, prop::collection::vec(any::<bool>(), 4), 0u8..3), 1..60).prop_map(|patients| {
        let mut out = Vec::new();
        for (p, (studies, views, birads)) in patients.into_iter().enumerate() {
            for s in 0..studies {
                let combos = [(Laterality::L, View::CC), (Laterality::L, View::MLO), (Laterality::R, View::CC), (Laterality::R, View::MLO)];
                for (i, (l, v)) in combos.into_iter().enumerate() {
                    if views[i] || i == 0 {
                        out.push(record(p, s, l, v, [1, 2, 4][birads as usize]));
                    }
                }
            }
        }
        out
    })
}

fn ratios() -> impl Strategy<Value = [f64; 3]> {
    (1u32..10, 0u32..10, 0u32..10).prop_map(|(a, b, c)| {
        let t = f64::from(a + b + c);
        [f64::from(a) / t, f64::from(b) / t, f64::from(c) / t]
    })
}

proptest! {
    #[test]
    fn split_never_shares_a_patient(records in manifest(), ratios in ratios(), seed in any::<u64>()) {
        let split = split_patients(&records, ratios, seed).unwrap();
        let ids = |part: &[CaseRecord]| part.iter().map(|r| r.patient_id.clone()).collect::<BTreeSet<_>>();
        let (a, b, c) = (ids(&split.train), ids(&split.val), ids(&split.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len(), records.len());
        let again = split_patients(&records, ratios, seed).unwrap();
        prop_assert_eq!(ids(&again.test), c);
    }

    #[test]
    fn breast_score_is_the_view_maximum(
        views in prop::collection::vec((0usize..8, any::<bool>(), any::<bool>(), 0.0f64..1.0, 0u8..3), 1..40),
        rotate in 0usize..40,
    ) {
        let preds: Vec<PredictionRecord> = views
            .iter()
            .map(|&(p, lat, view, score, label)| PredictionRecord {
                patient_id: format!("P{p}"),
                study_id: "S".into(),
                laterality: if lat { Laterality::L } else { Laterality::R },
                view: Some(if view { View::CC } else { View::MLO }),
                score,
                label: [TriageLabel::Negative, TriageLabel::Positive, TriageLabel::Excluded][label as usize],
                density: Density::C,
                findings: vec![Finding::None],
            })
            .collect();
        let breasts = aggregate_breast(&preds).unwrap();
        let mut expected: BTreeMap<(String, Laterality), f64> = BTreeMap::new();
        for v in &preds {
            let e = expected.entry((v.patient_id.clone(), v.laterality)).or_insert(f64::NEG_INFINITY);
            *e = e.max(v.score);
        }
        prop_assert_eq!(breasts.len(), expected.len());
        for b in &breasts {
            prop_assert_eq!(b.score, expected[&(b.patient_id.clone(), b.laterality)]);
        }
        let mut shuffled = preds.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(aggregate_breast(&shuffled).unwrap(), breasts);
    }
}
