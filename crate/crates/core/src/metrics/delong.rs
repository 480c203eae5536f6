use serde::{Deserialize, Serialize};

use super::{check_inputs, normal_two_sided_p, MetricsError, Result};

/// Structural components of the AUC. `positive[i]` is the fraction of
/// negatives scored below positive `i` (ties count half); `negative[j]` is the
/// fraction of positives scored above negative `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Placements {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl Placements {
    pub fn auc(&self) -> f64 {
        self.positive.iter().sum::<f64>() / self.positive.len() as f64
    }
}

/// Count of values `< x` and `== x` in a sorted slice.
fn rank_counts(sorted: &[f64], x: f64) -> (usize, usize) {
    let below = sorted.partition_point(|&v| v < x);
    let upto = sorted.partition_point(|&v| v <= x);
    (below, upto - below)
}

pub fn placement_values(scores: &[f64], labels: &[bool]) -> Result<Placements> {
    check_inputs(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut pos_sorted = pos.clone();
    let mut neg_sorted = neg.clone();
    pos_sorted.sort_by(f64::total_cmp);
    neg_sorted.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let positive = pos
        .iter()
        .map(|&x| {
            let (below, eq) = rank_counts(&neg_sorted, x);
            (below as f64 + 0.5 * eq as f64) / nn
        })
        .collect();
    let negative = neg
        .iter()
        .map(|&y| {
            let (below, eq) = rank_counts(&pos_sorted, y);
            let above = pos.len() - below - eq;
            (above as f64 + 0.5 * eq as f64) / np
        })
        .collect();
    Ok(Placements { positive, negative })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    /// `auc_b - auc_a`
    pub delta: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
    pub z: f64,
    pub p: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() - 1) as f64
}

/// Paired comparison of two correlated AUCs over the same cases.
pub fn delong_paired(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult> {
    let (np, nn) = check_inputs(scores_a, labels)?;
    check_inputs(scores_b, labels)?;
    if np < 2 || nn < 2 {
        return Err(MetricsError::TooFewCases { needed: 2, positives: np, negatives: nn });
    }
    let a = placement_values(scores_a, labels)?;
    let b = placement_values(scores_b, labels)?;
    let (auc_a, auc_b) = (a.auc(), b.auc());
    let (npf, nnf) = (np as f64, nn as f64);
    let var_a = cov(&a.positive, &a.positive) / npf + cov(&a.negative, &a.negative) / nnf;
    let var_b = cov(&b.positive, &b.positive) / npf + cov(&b.negative, &b.negative) / nnf;
    let c = cov(&a.positive, &b.positive) / npf + cov(&a.negative, &b.negative) / nnf;
    let delta = auc_b - auc_a;
    let var = (var_a + var_b - 2.0 * c).max(0.0);
    let (z, p) = if delta == 0.0 {
        (0.0, 1.0)
    } else if var <= 1e-300 {
        return Err(MetricsError::DegenerateVariance { delta });
    } else {
        let z = delta / var.sqrt();
        (z, normal_two_sided_p(z))
    };
    Ok(DelongResult { auc_a, auc_b, delta, var_a, var_b, cov: c, z, p })
}
