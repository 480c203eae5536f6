use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    /// Two-sided; 0.05 gives 2.5/97.5 percentile bounds.
    pub alpha: f64,
    /// Consecutive undefined replicates tolerated before giving up.
    pub max_redraws: usize,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig { n_resamples: 2000, seed, alpha: 0.05, max_redraws: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub method: String,
    /// Replicates redrawn because the statistic was undefined on them.
    pub redraws: usize,
}

/// Linear-interpolation quantile of sorted data (numpy's default).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap that resamples whole clusters (patients) with
/// replacement. Clusters are keyed by sorted id and each replicate has its own
/// ChaCha stream, so results depend on neither record order nor scheduling.
/// Bounds are widened to contain the point estimate when needed.
pub fn bootstrap_ci<R, K>(
    records: &[R],
    cluster: impl Fn(&R) -> K,
    statistic: impl Fn(&[&R]) -> Option<f64> + Sync,
    cfg: &BootstrapConfig,
) -> Result<CiEstimate>
where
    R: Sync,
    K: Ord,
{
    if cfg.n_resamples == 0 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(MetricsError::Invalid("need n_resamples > 0 and alpha in (0, 1)".into()));
    }
    let all: Vec<&R> = records.iter().collect();
    let point = statistic(&all).filter(|v| v.is_finite()).ok_or(MetricsError::UndefinedStatistic)?;
    let mut groups: BTreeMap<K, Vec<&R>> = BTreeMap::new();
    for r in records {
        groups.entry(cluster(r)).or_default().push(r);
    }
    let clusters: Vec<Vec<&R>> = groups.into_values().collect();
    let k = clusters.len();
    let outcomes: Vec<Result<(f64, usize)>> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut sample: Vec<&R> = Vec::with_capacity(records.len());
            for attempt in 0..=cfg.max_redraws {
                sample.clear();
                for _ in 0..k {
                    sample.extend_from_slice(&clusters[rng.random_range(0..k)]);
                }
                if let Some(v) = statistic(&sample).filter(|v| v.is_finite()) {
                    return Ok((v, attempt));
                }
            }
            Err(MetricsError::TooManyRedraws(cfg.max_redraws))
        })
        .collect();
    let mut values = Vec::with_capacity(cfg.n_resamples);
    let mut redraws = 0;
    for o in outcomes {
        let (v, r) = o?;
        values.push(v);
        redraws += r;
    }
    values.sort_by(f64::total_cmp);
    let lower = percentile(&values, cfg.alpha / 2.0).min(point);
    let upper = percentile(&values, 1.0 - cfg.alpha / 2.0).max(point);
    Ok(CiEstimate {
        point,
        lower,
        upper,
        n_resamples: cfg.n_resamples,
        seed: cfg.seed,
        method: "percentile".into(),
        redraws,
    })
}
