use clap::{Args, ValueEnum};
use mammocolor::imaging::{otsu_threshold, BitDepth, RawImage};
use mammocolor::metrics::{delong_paired, mcnemar_counts, roc_auc};
use mammocolor::mrmc::{category_counts, fleiss_kappa};
use mammocolor::pipeline::{freezing_check, pipeline_grad_check, PipelineGradCheck};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runtime;
use crate::config::{resolve, GlobalArgs};
use crate::error::{CliError, Result};
use crate::manifest::{write_json, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Check {
    /// Analytic against finite-difference gradients through the full network.
    Gradients,
    /// Frozen backbone digests unchanged by TDCE training.
    Freezing,
    /// Metric and agreement statistics against brute-force oracles.
    Statistics,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SelftestArgs {
    /// Checks to run; all by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub checks: Option<Vec<Check>>,
    /// Image side for the gradient check.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub freezing_epochs: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Outcome {
    check: String,
    passed: bool,
    detail: String,
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in scores.iter().enumerate().filter(|(i, _)| labels[*i]) {
        let _ = i;
        for (_, &n) in scores.iter().enumerate().filter(|(j, _)| !labels[*j]) {
            pairs += 1.0;
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

fn between_class_variance(hist: &[f64], t: usize) -> f64 {
    let n: f64 = hist.iter().sum();
    let (w0, w1) = (hist[..=t].iter().sum::<f64>() / n, hist[t + 1..].iter().sum::<f64>() / n);
    if w0 == 0.0 || w1 == 0.0 {
        return 0.0;
    }
    let m0 = hist[..=t].iter().enumerate().map(|(i, c)| i as f64 * c).sum::<f64>() / (w0 * n);
    let m1 = hist[t + 1..].iter().enumerate().map(|(i, c)| (i + t + 1) as f64 * c).sum::<f64>() / (w1 * n);
    w0 * w1 * (m0 - m1).powi(2)
}

fn statistics(seed: u64) -> std::result::Result<Vec<Outcome>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let e = |e: &dyn std::fmt::Display| e.to_string();

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(4..60);
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        worst = worst.max((roc_auc(&scores, &labels).map_err(|x| e(&x))? - brute_auc(&scores, &labels)).abs());
    }
    out.push(Outcome { check: "auc-oracle".into(), passed: worst <= 1e-12, detail: format!("max |diff| {worst:.3e}") });

    let m = mcnemar_counts(10, 0);
    out.push(Outcome { check: "mcnemar-exact".into(), passed: m.p == 0.001953125, detail: format!("p {}", m.p) });

    let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
    let scores: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let d = delong_paired(&scores, &scores, &labels).map_err(|x| e(&x))?;
    out.push(Outcome { check: "delong-identical".into(), passed: d.p == 1.0, detail: format!("p {}", d.p) });

    let ratings: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 3; 4]).collect();
    let k = category_counts(&ratings, 3).and_then(|c| fleiss_kappa(&c)).map_err(|x| e(&x))?;
    out.push(Outcome { check: "kappa-perfect".into(), passed: (k - 1.0).abs() < 1e-12, detail: format!("kappa {k}") });

    let mut gap = 0.0f64;
    for _ in 0..20 {
        let pixels: Vec<u16> = (0..256).map(|i| if i % 2 == 0 { rng.random_range(0..120) } else { rng.random_range(100..256) }).collect();
        let image = RawImage::new(16, 16, BitDepth::Eight, pixels).map_err(|x| e(&x))?;
        let t = otsu_threshold(&image).map_err(|x| e(&x))? as usize;
        let mut hist = vec![0.0; 256];
        image.pixels().iter().for_each(|&p| hist[p as usize] += 1.0);
        let best = (0..255).map(|s| between_class_variance(&hist, s)).fold(0.0, f64::max);
        gap = gap.max((best - between_class_variance(&hist, t)) / best);
    }
    out.push(Outcome { check: "otsu-exhaustive".into(), passed: gap <= 1e-9, detail: format!("max relative gap {gap:.3e}") });
    Ok(out)
}

pub fn run(g: &GlobalArgs, args: &SelftestArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let seed = r.seed.unwrap_or(0);
    let checks = o.checks.clone().unwrap_or_else(|| vec![Check::Gradients, Check::Freezing, Check::Statistics]);
    let mut outcomes = Vec::new();
    for c in checks {
        match c {
            Check::Gradients => {
                let size = o.image_size.unwrap_or(32);
                if size < 8 || size % 4 != 0 {
                    return Err(CliError::Validation(format!("image_size must be a multiple of 4 and at least 8, got {size}")));
                }
                let rep = pipeline_grad_check(&PipelineGradCheck { size, seed, ..Default::default() }).map_err(runtime)?;
                let worst = rep.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
                outcomes.push(Outcome {
                    check: "gradients".into(),
                    passed: rep.passed,
                    detail: format!(
                        "{} tensors, max relative error {:.3e}{} (tolerance {:.0e})",
                        rep.params.len(),
                        rep.max_rel_err,
                        worst.map(|w| format!(" at {}", w.name)).unwrap_or_default(),
                        rep.tolerance
                    ),
                });
            }
            Check::Freezing => {
                let epochs = o.freezing_epochs.unwrap_or(20);
                let rep = freezing_check(epochs, seed).map_err(runtime)?;
                outcomes.push(Outcome {
                    check: "freezing".into(),
                    passed: rep.passed,
                    detail: format!("{epochs} epochs, frozen digest {}", &rep.frozen_after[..16]),
                });
            }
            Check::Statistics => outcomes.extend(statistics(seed).map_err(|e| runtime(anyhow::anyhow!(e)))?),
        }
    }
    for o in &outcomes {
        println!("{} {:<18} {}", if o.passed { "PASS" } else { "FAIL" }, o.check, o.detail);
    }
    if r.output_dir.is_some() {
        let mut run = Run::new("selftest", r.output_dir()?, &r);
        write_json(&run.output("selftest.json"), &outcomes)?;
        run.finish()?;
    }
    match outcomes.iter().filter(|o| !o.passed).count() {
        0 => Ok(()),
        n => Err(CliError::Runtime(anyhow::anyhow!("{n} self-test check(s) failed"))),
    }
}
