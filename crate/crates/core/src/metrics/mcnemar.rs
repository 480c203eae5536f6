use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McnemarMethod {
    ExactBinomial,
    ChiSquareCorrected,
    NoDiscordance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McnemarResult {
    /// Cases model A gets right and model B gets wrong.
    pub b: u64,
    /// Cases model A gets wrong and model B gets right.
    pub c: u64,
    pub statistic: Option<f64>,
    pub p: f64,
    pub method: McnemarMethod,
}

fn binomial_two_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let mut term = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for i in 0..=k {
        tail += term;
        term *= (n - i) as f64 / (i + 1) as f64;
    }
    (2.0 * tail).min(1.0)
}

/// Exact binomial test when `b + c < 25`, otherwise chi-square with
/// continuity correction. The correction never pushes the statistic below 0.
pub fn mcnemar_counts(b: u64, c: u64) -> McnemarResult {
    let n = b + c;
    if n == 0 {
        return McnemarResult { b, c, statistic: None, p: 1.0, method: McnemarMethod::NoDiscordance };
    }
    if n < 25 {
        return McnemarResult { b, c, statistic: None, p: binomial_two_sided(b, c), method: McnemarMethod::ExactBinomial };
    }
    let d = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let chi2 = d * d / n as f64;
    let p = libm::erfc((chi2 / 2.0).sqrt());
    McnemarResult { b, c, statistic: Some(chi2), p, method: McnemarMethod::ChiSquareCorrected }
}

/// Paired binary calls against the same labels.
pub fn mcnemar(calls_a: &[bool], calls_b: &[bool], labels: &[bool]) -> Result<McnemarResult> {
    if calls_a.len() != labels.len() || calls_b.len() != labels.len() {
        return Err(MetricsError::Invalid("calls and labels must have equal length".into()));
    }
    let (mut b, mut c) = (0, 0);
    for ((&x, &y), &l) in calls_a.iter().zip(calls_b).zip(labels) {
        match (x == l, y == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(mcnemar_counts(5, 5).p, 1.0);
        assert_eq!(mcnemar_counts(10, 0).p, 0.001953125);
        let r = mcnemar_counts(30, 10);
        assert!((r.statistic.unwrap() - 9.025).abs() < 1e-12);
        // chi-square(1) survival at 9.025
        assert!((r.p - 0.002663).abs() < 1e-5, "{}", r.p);
        assert_eq!(mcnemar_counts(0, 0).method, McnemarMethod::NoDiscordance);
    }

    #[test]
    fn counts_from_calls() {
        let labels = [true, true, false, false];
        let a = [true, false, false, true];
        let b = [false, true, false, false];
        let r = mcnemar(&a, &b, &labels).unwrap();
        assert_eq!((r.b, r.c), (1, 2));
        assert!(mcnemar(&a, &b[..3], &labels).is_err());
    }

    #[test]
    fn exact_matches_direct_sum() {
        let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        for (b, c) in [(3, 9), (0, 4), (11, 12), (7, 1)] {
            let n = b + c;
            let k = b.min(c);
            let direct: f64 = (0..=k).map(|i| choose(n, i)).sum::<f64>() / 2f64.powi(n as i32);
            assert!((mcnemar_counts(b, c).p - (2.0 * direct).min(1.0)).abs() < 1e-14);
        }
    }
}
