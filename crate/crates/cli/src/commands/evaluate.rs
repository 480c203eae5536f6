use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mammocolor::metrics::{
    cohort_report, subgroup_eval, write_roc_csv, youden_threshold, BootstrapConfig, Selector, ThresholdSource,
};
use mammocolor::pipeline::{read_predictions, PredictionRecord};
use serde::{Deserialize, Serialize};

use super::runtime;
use crate::config::{existing, required, resolve, GlobalArgs, Resolved};
use crate::error::{invalid, CliError, Result, RuntimeContext, ValidationContext};
use crate::manifest::{write_json, Run};

/// Inputs shared by `evaluate` and `subgroup`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Comparison {
    /// Prediction CSV of the reference model.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Prediction CSV of the compared model (same cases).
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long)]
    pub name_a: Option<String>,
    #[arg(long)]
    pub name_b: Option<String>,
    /// Validation-split predictions of model A; with `val_b`, fixes both
    /// Youden thresholds. Without them thresholds come from this cohort.
    #[arg(long)]
    pub val_a: Option<PathBuf>,
    #[arg(long)]
    pub val_b: Option<PathBuf>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = std::fs::File::open(existing(path)?).runtime(&format!("opening {}", path.display()))?;
    read_predictions(std::io::BufReader::new(f)).invalid_input(&format!("predictions {}", path.display()))
}

fn youden_of(path: &Path) -> Result<f64> {
    let preds = load_predictions(path)?;
    let (s, l): (Vec<f64>, Vec<bool>) = preds.iter().filter_map(|p| p.truth().map(|t| (p.score, t))).unzip();
    youden_threshold(&s, &l).invalid_input(&format!("Youden threshold on {}", path.display()))
}

struct Loaded {
    a: Vec<PredictionRecord>,
    b: Vec<PredictionRecord>,
    names: (String, String),
    thresholds: (f64, f64),
    source: ThresholdSource,
    boot: BootstrapConfig,
}

fn load<C>(c: &Comparison, r: &Resolved<C>, run: &mut Run) -> Result<Loaded> {
    let seed = r.seed()?;
    let pa = required(c.a.clone(), "a")?;
    let pb = required(c.b.clone(), "b")?;
    let (a, b) = (load_predictions(&pa)?, load_predictions(&pb)?);
    run.input(&pa);
    run.input(&pb);
    let (thresholds, source) = match (&c.val_a, &c.val_b) {
        (Some(va), Some(vb)) => {
            run.input(va);
            run.input(vb);
            ((youden_of(va)?, youden_of(vb)?), ThresholdSource::Validation)
        }
        (None, None) => {
            let cohort = |p: &[PredictionRecord], path: &Path| -> Result<f64> {
                let (s, l): (Vec<f64>, Vec<bool>) = p.iter().filter_map(|x| x.truth().map(|t| (x.score, t))).unzip();
                youden_threshold(&s, &l).invalid_input(&format!("Youden threshold on {}", path.display()))
            };
            ((cohort(&a, &pa)?, cohort(&b, &pb)?), ThresholdSource::Cohort)
        }
        _ => return invalid("val_a and val_b must be given together"),
    };
    let mut boot = BootstrapConfig::new(seed);
    boot.n_resamples = c.resamples.unwrap_or(boot.n_resamples);
    boot.alpha = c.alpha.unwrap_or(boot.alpha);
    if boot.n_resamples == 0 || !(0.0 < boot.alpha && boot.alpha < 1.0) {
        return invalid("resamples must be positive and alpha in (0, 1)");
    }
    let names = (c.name_a.clone().unwrap_or_else(|| "A".into()), c.name_b.clone().unwrap_or_else(|| "B".into()));
    Ok(Loaded { a, b, names, thresholds, source, boot })
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub comparison: Comparison,
    /// Cohort label in the report.
    #[arg(long)]
    pub cohort: Option<String>,
}

fn fmt_ci(e: &mammocolor::metrics::CiEstimate) -> String {
    format!("{:.4} [{:.4}, {:.4}]", e.point, e.lower, e.upper)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

pub fn evaluate(g: &GlobalArgs, args: &EvaluateArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let mut run = Run::new("evaluate", r.output_dir()?, &r);
    let l = load(&r.options.comparison, &r, &mut run)?;
    let cohort = r.options.cohort.clone().unwrap_or_else(|| "cohort".into());
    let report = cohort_report(
        &cohort,
        (&l.names.0, &l.names.1),
        &l.a,
        &l.b,
        l.thresholds,
        l.source,
        &l.boot,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    write_json(&run.output("report.json"), &report)?;
    for (file, roc) in [("roc_a.csv", &report.roc_a), ("roc_b.csv", &report.roc_b)] {
        if let Some(roc) = roc {
            let path = run.output(file);
            let f = std::fs::File::create(&path).runtime("creating ROC file")?;
            write_roc_csv(&roc.curve, std::io::BufWriter::new(f)).map_err(runtime)?;
        }
    }
    println!("{cohort}: {} positive, {} negative, thresholds from {:?}", report.n_pos, report.n_neg, report.threshold_source);
    for m in [&report.model_a, &report.model_b] {
        let op = &m.operating_point;
        println!(
            "  {:<12} AUC {}  thr {:.4}  sens {}  spec {}  acc {}",
            m.name,
            fmt_ci(&m.auc),
            m.threshold,
            opt(op.sensitivity),
            opt(op.specificity),
            opt(op.accuracy)
        );
    }
    let c = &report.comparison;
    match &c.delong {
        Some(d) => println!("  DeLong dAUC {:+.4} z {:.3} p {:.4}", d.delta, d.z, d.p),
        None => println!("  DeLong: {}", c.delong_note.as_deref().unwrap_or("undefined")),
    }
    println!("  McNemar b {} c {} p {:.4}", c.mcnemar.b, c.mcnemar.c, c.mcnemar.p);
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    All,
    Density,
    Finding,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SubgroupArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub comparison: Comparison,
    #[arg(long, value_enum)]
    pub by: Option<GroupBy>,
}

pub fn subgroup(g: &GlobalArgs, args: &SubgroupArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let mut run = Run::new("subgroup", r.output_dir()?, &r);
    let l = load(&r.options.comparison, &r, &mut run)?;
    let selector = match r.options.by.unwrap_or(GroupBy::Density) {
        GroupBy::All => Selector::All,
        GroupBy::Density => Selector::Density,
        GroupBy::Finding => Selector::Finding,
    };
    let rows = subgroup_eval(&l.a, &l.b, selector, l.thresholds, &l.boot).map_err(|e| CliError::Validation(e.to_string()))?;
    write_json(&run.output("subgroups.json"), &rows)?;
    for row in &rows {
        let auc = |m: &Option<mammocolor::metrics::SubgroupModel>| m.as_ref().map_or("n/a".into(), |m| fmt_ci(&m.auc));
        println!(
            "{:<16} pos {:>5} neg {:>5}  {} {}  {} {}  p {}",
            row.subgroup,
            row.n_pos,
            row.n_neg,
            l.names.0,
            auc(&row.model_a),
            l.names.1,
            auc(&row.model_b),
            opt(row.delong_p)
        );
    }
    run.finish()
}
