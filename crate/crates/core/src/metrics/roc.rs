use serde::{Deserialize, Serialize};

use super::{check_inputs, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// The first point uses `+inf` (nothing called positive).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub curve: Vec<RocPoint>,
}

/// `(score, label)` ascending by score.
fn sorted_pairs(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut v: Vec<_> = scores.iter().copied().zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Equal-score groups as `(score, positives, negatives)`, ascending.
fn groups(pairs: &[(f64, bool)]) -> Vec<(f64, u64, u64)> {
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    for &(s, l) in pairs {
        match out.last_mut() {
            Some(g) if g.0 == s => {
                if l { g.1 += 1 } else { g.2 += 1 }
            }
            _ => out.push((s, l as u64, !l as u64)),
        }
    }
    out
}

/// Mann-Whitney AUC with half credit for ties, computed in integers so the
/// result is the correctly rounded pairwise fraction.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (np, nn) = check_inputs(scores, labels)?;
    let mut neg_below: u128 = 0;
    let mut twice: u128 = 0;
    for (_, p, n) in groups(&sorted_pairs(scores, labels)) {
        twice += 2 * p as u128 * neg_below + p as u128 * n as u128;
        neg_below += n as u128;
    }
    Ok(twice as f64 / (2 * np as u128 * nn as u128) as f64)
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    let (np, nn) = check_inputs(scores, labels)?;
    let auc = roc_auc(scores, labels)?;
    let mut curve = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (s, p, n) in groups(&sorted_pairs(scores, labels)).into_iter().rev() {
        tp += p;
        fp += n;
        curve.push(RocPoint { fpr: fp as f64 / nn as f64, tpr: tp as f64 / np as f64, threshold: s });
    }
    Ok(RocResult { auc, curve })
}

/// Maximizes sensitivity + specificity - 1 over the distinct scores. Ties go
/// to the higher specificity, then the higher threshold.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (np, nn) = check_inputs(scores, labels)?;
    let (np, nn) = (np as i128, nn as i128);
    // J * np * nn = tp * nn + tn * np - np * nn; compare the integer numerators.
    let mut best: Option<(i128, i128, f64)> = None;
    let (mut tp, mut fp) = (0i128, 0i128);
    for (s, p, n) in groups(&sorted_pairs(scores, labels)).into_iter().rev() {
        tp += p as i128;
        fp += n as i128;
        let tn = nn - fp;
        let j = tp * nn + tn * np;
        let better = match best {
            None => true,
            Some((bj, btn, bs)) => (j, tn).cmp(&(bj, btn)).then(s.total_cmp(&bs)).is_gt(),
        };
        if better {
            best = Some((j, tn, s));
        }
    }
    Ok(best.expect("non-empty").2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Ratios with a zero denominator are `None`.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn operating_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> OperatingPoint {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    OperatingPoint {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        balanced_accuracy: sensitivity.zip(specificity).map(|(a, b)| (a + b) / 2.0),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsError;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut sum = 0.0;
        let (mut np, mut nn) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            if li { np += 1.0 } else { nn += 1.0 }
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if !lj {
                    sum += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        sum / (np * nn)
    }

    fn brute_youden(scores: &[f64], labels: &[bool]) -> f64 {
        let mut cands: Vec<f64> = scores.to_vec();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in &cands {
            let op = operating_metrics(scores, labels, t);
            let (se, sp) = (op.sensitivity.unwrap(), op.specificity.unwrap());
            let j = se + sp - 1.0;
            let key = (j, sp, t);
            let better = if (key.0 - best.0).abs() > 1e-12 {
                key.0 > best.0
            } else if key.1 != best.1 {
                key.1 > best.1
            } else {
                key.2 > best.2
            };
            if better {
                best = key;
            }
        }
        best.2
    }

    #[test]
    fn auc_examples() {
        let l = [true, false, true, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.7, 0.1], &l).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1, 0.8, 0.2], &l).unwrap(), 1.0);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass { .. })));
        assert!(matches!(roc_auc(&[f64::NAN, 0.2], &[true, false]), Err(MetricsError::NonFinite(0))));
    }

    #[test]
    fn youden_examples() {
        let l = [false, false, true, true];
        assert_eq!(youden_threshold(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.8);
        assert_eq!(youden_threshold(&[0.1, 0.2, 0.6, 0.9], &l).unwrap(), 0.6);
        assert_eq!(youden_threshold(&[0.3, 0.3, 0.7, 0.7], &l).unwrap(), 0.7);
    }

    #[test]
    fn operating_point_arithmetic() {
        let labels = [true, true, true, false, false, false];
        let scores = [0.9, 0.8, 0.1, 0.7, 0.2, 0.3];
        let op = operating_metrics(&scores, &labels, 0.5);
        assert_eq!((op.tp, op.fp, op.fn_, op.tn), (2, 1, 1, 2));
        for v in [op.sensitivity, op.specificity, op.ppv, op.f1] {
            assert!((v.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
        let all = operating_metrics(&scores, &labels, 0.0);
        assert_eq!(all.specificity, Some(0.0));
        assert_eq!(all.npv, None);
        let perfect = operating_metrics(&[0.9, 0.1], &[true, false], 0.5);
        assert_eq!([perfect.sensitivity, perfect.specificity, perfect.ppv, perfect.npv], [Some(1.0); 4]);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((s, l) in instance()) {
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), brute_auc(&s, &l));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
        }

        #[test]
        fn curve_is_monotone_and_integrates_to_auc((s, l) in instance()) {
            let r = roc_curve(&s, &l).unwrap();
            let mut area = 0.0;
            for w in r.curve.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
                area += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
            }
            let last = r.curve.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            prop_assert!((area - r.auc).abs() < 1e-12);
        }

        #[test]
        fn youden_matches_exhaustive_scan((s, l) in instance()) {
            prop_assert_eq!(youden_threshold(&s, &l).unwrap(), brute_youden(&s, &l));
        }

        #[test]
        fn balanced_accuracy_is_mean((s, l) in instance(), t in 0.0f64..1.0) {
            let op = operating_metrics(&s, &l, t);
            let b = (op.sensitivity.unwrap() + op.specificity.unwrap()) / 2.0;
            prop_assert_eq!(op.balanced_accuracy.unwrap(), b);
        }
    }
}
