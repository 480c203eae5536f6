use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DiffError, Gradients, ParamSet, Result};

/// A scalar loss of the parameters, with and without its analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParamSet<f64>) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, Gradients<f64>)>;

    /// Loss plus an identifier of the smooth piece the point lies on (see
    /// [`Tape::activation_signature`](super::Tape::activation_signature)).
    fn loss_and_signature(&self, params: &ParamSet<f64>) -> Result<(f64, Option<u64>)> {
        Ok((self.loss(params)?, None))
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per named parameter; `None` checks every entry.
    /// Sampled entries always include the largest-magnitude analytic entry.
    pub max_entries_per_param: Option<usize>,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
    pub seed: u64,
    /// Times the step may shrink tenfold when `x + h` or `x - h` lands on a
    /// different smooth piece than `x` (a ReLU or max-pool kink inside the
    /// stencil). Needs an objective that reports signatures.
    pub refinements: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, max_entries_per_param: None, abs_floor: 1e-8, seed: 0, refinements: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
    /// Entries whose step had to shrink.
    pub refined: usize,
    /// Entries whose stencil still crossed a kink at the smallest step.
    pub unstable: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients with central finite differences for every
/// named parameter (trainable or not).
pub fn grad_check(objective: &dyn Objective, params: &ParamSet<f64>, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let (loss, grads) = objective.loss_and_grad(params)?;
    let signature = objective.loss_and_signature(params)?.1;
    if !loss.is_finite() {
        return Err(DiffError::NonFinite(format!("loss {loss}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads.param(&name).ok_or_else(|| DiffError::MissingGradient(name.clone()))?;
        if !analytic.is_finite() {
            return Err(DiffError::NonFinite(format!("gradient of `{name}`")));
        }
        let numel = analytic.len();
        let mut entries: Vec<usize> = match config.max_entries_per_param {
            Some(k) if k < numel => {
                let mut e = sample(&mut rng, numel, k).into_vec();
                let argmax = (0..numel)
                    .max_by(|&a, &b| analytic.data()[a].abs().total_cmp(&analytic.data()[b].abs()))
                    .unwrap_or(0);
                if !e.contains(&argmax) {
                    e[0] = argmax;
                }
                e.sort_unstable();
                e
            }
            _ => (0..numel).collect(),
        };
        entries.dedup();
        let mut worst = 0.0f64;
        let (mut refined, mut unstable) = (0, 0);
        for &i in &entries {
            let orig = work.tensor(&name)?.data()[i];
            let mut central = |h: f64| -> Result<(f64, bool)> {
                work.tensor_mut(&name)?.data_mut()[i] = orig + h;
                let (plus, sp) = objective.loss_and_signature(&work)?;
                work.tensor_mut(&name)?.data_mut()[i] = orig - h;
                let (minus, sm) = objective.loss_and_signature(&work)?;
                work.tensor_mut(&name)?.data_mut()[i] = orig;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(DiffError::NonFinite(format!("loss while perturbing `{name}`[{i}]")));
                }
                Ok(((plus - minus) / (2.0 * h), sp == signature && sm == signature))
            };
            let mut h = config.step;
            let mut numeric;
            let mut round = 0;
            loop {
                let (n, smooth) = central(h)?;
                numeric = n;
                if smooth {
                    break;
                }
                if round == config.refinements {
                    unstable += 1;
                    break;
                }
                refined += usize::from(round == 0);
                round += 1;
                h /= 10.0;
            }
            worst = worst.max(relative_error(analytic.data()[i], numeric, config.abs_floor));
        }
        report.push(ParamCheck {
            name,
            checked: entries.len(),
            numel,
            max_rel_err: worst,
            max_abs_grad: analytic.max_abs(),
            refined,
            unstable,
        });
    }
    let max_rel_err = report.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { params: report, max_rel_err, tolerance: config.tolerance, passed: max_rel_err < config.tolerance })
}
