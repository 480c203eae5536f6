use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Subcommand, ValueEnum};
use mammocolor::mrmc::{
    build_plan, category_counts, fleiss_kappa, glmm_fit, outcomes_from_ratings, read_ratings_csv, reader_table,
    reading_time, write_ratings_csv, Condition, GlmmConfig, GlmmFit, Reader, ReaderRating, StudyPlan, Subset, Tier,
    DEFAULT_WASHOUT_DAYS,
};
use mammocolor::pipeline::TriageLabel;
use mammocolor_study::{read_log, AppState, ServiceConfig, StudyState, SystemClock, Tokens, LOG_FILE};
use serde::{Deserialize, Serialize};

use super::runtime;
use crate::config::{existing, required, resolve, GlobalArgs};
use crate::error::{invalid, CliError, Result, RuntimeContext, ValidationContext};
use crate::manifest::{write_json, Run};

/// Environment variable naming the JSON tokens file for `serve`.
pub const TOKENS_ENV: &str = "MAMMOCOLOR_TOKENS_FILE";

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Counterbalanced session plan with per-reader case orders.
    Plan(PlanArgs),
    /// Ratings CSV of a study, rebuilt read-only from its event log.
    Export(ExportArgs),
    /// Reader table, Fleiss' kappa and mixed-model reports from a ratings CSV.
    Analyze(AnalyzeArgs),
}

pub fn run(g: &GlobalArgs, c: &StudyCommand) -> Result<()> {
    match c {
        StudyCommand::Plan(a) => plan(g, a),
        StudyCommand::Export(a) => export(g, a),
        StudyCommand::Analyze(a) => analyze(g, a),
    }
}

/// Non-empty, non-comment lines split on commas, with 1-based line numbers.
/// The first row is a header and must match `header`.
fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(existing(path)?).runtime(&format!("reading {}", path.display()))?;
    let mut rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split(',').map(|f| f.trim().to_string()).collect::<Vec<_>>()));
    match rows.next() {
        Some((_, h)) if h.iter().map(String::as_str).eq(header.iter().copied()) => {}
        Some((line, h)) => {
            return invalid(format!("{} line {line}: header {:?}, expected {:?}", path.display(), h, header));
        }
        None => return invalid(format!("{} is empty", path.display())),
    }
    let rows: Vec<_> = rows.collect();
    if let Some((line, r)) = rows.iter().find(|(_, r)| r.len() != header.len()) {
        return invalid(format!("{} line {line}: {} fields, expected {}", path.display(), r.len(), header.len()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    /// CSV with header `reader_id,tier` (junior, intermediate, senior).
    #[arg(long)]
    pub readers: Option<PathBuf>,
    /// Case identifiers, one per line.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    #[arg(long)]
    pub washout_days: Option<u32>,
}

fn plan(g: &GlobalArgs, args: &PlanArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let seed = r.seed()?;
    let o = &r.options;
    let readers_path = required(o.readers.clone(), "readers")?;
    let cases_path = required(o.cases.clone(), "cases")?;
    let readers = read_table(&readers_path, &["reader_id", "tier"])?
        .into_iter()
        .map(|(line, f)| {
            let tier: Tier = serde_json::from_value(serde_json::Value::String(f[1].clone()))
                .map_err(|_| CliError::Validation(format!("{} line {line}: unknown tier '{}'", readers_path.display(), f[1])))?;
            Ok(Reader { reader_id: f[0].clone(), tier })
        })
        .collect::<Result<Vec<_>>>()?;
    let cases: Vec<String> = std::fs::read_to_string(existing(&cases_path)?)
        .runtime("reading cases")?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    let study = build_plan(&readers, &cases, seed, o.washout_days.unwrap_or(DEFAULT_WASHOUT_DAYS)).invalid_input("plan")?;
    let mut run = Run::new("study plan", r.output_dir()?, &r);
    run.input(&readers_path);
    run.input(&cases_path);
    write_json(&run.output("plan.json"), &study)?;
    println!("plan: {} readers x {} cases x 3 sessions, washout {} days", study.readers.len(), study.cases.len(), study.washout_days);
    run.finish()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    /// The service's data directory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub study_id: Option<String>,
}

/// State replayed from the log without touching the store (no recovery
/// events are appended).
fn replay_study(dir: &Path) -> Result<StudyState> {
    let log = read_log(&dir.join(LOG_FILE)).invalid_input(&format!("event log in {}", dir.display()))?;
    if log.torn {
        tracing::warn!(dir = %dir.display(), "ignoring a torn final record");
    }
    StudyState::replay(&log.events).invalid_input("event log")
}

fn export(g: &GlobalArgs, args: &ExportArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let data_dir = required(o.data_dir.clone(), "data_dir")?;
    let study_id = required(o.study_id.clone(), "study_id")?;
    let dir = data_dir.join(&study_id);
    existing(&dir.join(LOG_FILE))?;
    let state = replay_study(&dir)?;
    let ratings = state.reader_ratings();
    let mut run = Run::new("study export", r.output_dir()?, &r);
    run.input(&dir.join(LOG_FILE));
    let path = run.output("ratings.csv");
    let f = std::fs::File::create(&path).runtime("creating ratings.csv")?;
    write_ratings_csv(&ratings, std::io::BufWriter::new(f)).map_err(runtime)?;
    println!("export: {} ratings from study {study_id}", ratings.len());
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaScale {
    /// Suspicious / non-suspicious calls.
    Binary,
    /// The seven BI-RADS categories 0-6.
    Birads,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// CSV with header `case_id,label` (positive, negative, excluded).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Study plan; supplies reader tiers.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kappa_scale: Option<KappaScale>,
}

#[derive(Debug, Serialize)]
struct ReadingTime {
    reader_id: String,
    condition: Condition,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct KappaRow {
    condition: Condition,
    scale: KappaScale,
    raters: usize,
    cases: usize,
    /// Cases left out because not every reader gave a usable rating.
    incomplete_cases: usize,
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct GlmmRow {
    subset: Subset,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<GlmmFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn kappa_rows(ratings: &[ReaderRating], scale: KappaScale) -> Vec<KappaRow> {
    let mut rows = Vec::new();
    for condition in Condition::ALL {
        let of: Vec<&ReaderRating> = ratings.iter().filter(|r| r.condition == condition).collect();
        if of.is_empty() {
            continue;
        }
        let raters = of.iter().map(|r| r.reader_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        let mut by_case: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for r in &of {
            let category = match scale {
                KappaScale::Binary => r.call().map(|c| usize::from(c.is_suspicious())),
                KappaScale::Birads => r.birads.map(|b| b.category() as usize),
            };
            let entry = by_case.entry(&r.case_id).or_default();
            if let Some(k) = category {
                entry.push(k);
            }
        }
        let total = by_case.len();
        let complete: Vec<Vec<usize>> = by_case.into_values().filter(|v| v.len() == raters).collect();
        let k = match scale {
            KappaScale::Binary => 2,
            KappaScale::Birads => 7,
        };
        let result = category_counts(&complete, k).and_then(|c| fleiss_kappa(&c));
        rows.push(KappaRow {
            condition,
            scale,
            raters,
            cases: complete.len(),
            incomplete_cases: total - complete.len(),
            kappa: result.as_ref().ok().copied(),
            note: result.err().map(|e| e.to_string()),
        });
    }
    rows
}

fn analyze(g: &GlobalArgs, args: &AnalyzeArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let ratings_path = required(o.ratings.clone(), "ratings")?;
    let reference_path = required(o.reference.clone(), "reference")?;
    let f = std::fs::File::open(existing(&ratings_path)?).runtime("opening ratings")?;
    let ratings = read_ratings_csv(std::io::BufReader::new(f)).invalid_input(&format!("ratings {}", ratings_path.display()))?;
    let mut reference = BTreeMap::new();
    for (line, f) in read_table(&reference_path, &["case_id", "label"])? {
        let label = TriageLabel::from_str(&f[1])
            .map_err(|e| CliError::Validation(format!("{} line {line}: {e}", reference_path.display())))?;
        reference.insert(f[0].clone(), label);
    }
    let mut tiers = BTreeMap::new();
    let mut run = Run::new("study analyze", r.output_dir()?, &r);
    run.input(&ratings_path);
    run.input(&reference_path);
    if let Some(p) = &o.plan {
        let text = std::fs::read_to_string(existing(p)?).runtime("reading plan")?;
        let plan: StudyPlan = serde_json::from_str(&text).invalid_input(&format!("plan {}", p.display()))?;
        tiers.extend(plan.readers.iter().map(|r| (r.reader_id.clone(), r.tier)));
        run.input(p);
    }

    let table = reader_table(&ratings, &reference, &tiers).invalid_input("reader table")?;
    let times: Vec<ReadingTime> = reading_time(&ratings)
        .invalid_input("reading time")?
        .into_iter()
        .map(|((reader_id, condition), seconds)| ReadingTime { reader_id, condition, seconds })
        .collect();
    write_json(&run.output("reader_table.json"), &serde_json::json!({ "table": table, "reading_seconds": times }))?;

    let scale = o.kappa_scale.unwrap_or(KappaScale::Binary);
    let kappas = kappa_rows(&ratings, scale);
    write_json(&run.output("kappa.json"), &kappas)?;

    let mut glmm = Vec::new();
    for subset in [Subset::All, Subset::ReferencePositive, Subset::ReferenceNegative] {
        let fit = outcomes_from_ratings(&ratings, &reference, subset).and_then(|o| glmm_fit(&o, &GlmmConfig::default()));
        glmm.push(match fit {
            Ok(f) => GlmmRow { subset, fit: Some(f), error: None },
            Err(e) => GlmmRow { subset, fit: None, error: Some(e.to_string()) },
        });
    }
    write_json(&run.output("glmm.json"), &glmm)?;

    println!("condition        tier          readers  accuracy  sensitivity  specificity");
    let f = |v: Option<f64>| v.map_or("    n/a".into(), |x| format!("{x:7.4}"));
    for a in &table.aggregates {
        let tier = a.tier.map_or("all".to_string(), |t| format!("{t:?}").to_lowercase());
        println!(
            "{:<16} {:<13} {:>7}  {}   {}      {}",
            a.condition.as_str(),
            tier,
            a.n_readers,
            f(a.accuracy),
            f(a.sensitivity),
            f(a.specificity)
        );
    }
    for k in &kappas {
        println!("kappa ({:?}) {:<14} {} over {} cases", scale, k.condition.as_str(), f(k.kappa), k.cases);
    }
    for row in &glmm {
        match (&row.fit, &row.error) {
            (Some(fit), _) => {
                for e in fit.fixed.iter().filter(|e| e.name != "intercept") {
                    println!(
                        "GLMM {:<18} {:<13} beta {:+.4} SE {} p {}{}",
                        format!("{:?}", row.subset),
                        e.name,
                        e.estimate,
                        f(e.std_error).trim(),
                        f(e.p).trim(),
                        if fit.converged { "" } else { " (not converged)" }
                    );
                }
            }
            (None, Some(err)) => println!("GLMM {:?}: {err}", row.subset),
            _ => {}
        }
    }
    run.finish()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Root of `<kind>/<case_id>/<view>.png` image files.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<SocketAddr>,
    /// Replaces the plan's washout for studies created by this process.
    #[arg(long)]
    pub washout_override_days: Option<u32>,
}

pub fn serve(g: &GlobalArgs, args: &ServeArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let data_dir = required(o.data_dir.clone(), "data_dir")?;
    if let Some(root) = &o.image_root {
        existing(root)?;
    }
    let tokens = match std::env::var_os(TOKENS_ENV) {
        Some(p) => Some(Tokens::from_file(Path::new(&p)).invalid_input(TOKENS_ENV)?),
        None => None,
    };
    let config = ServiceConfig {
        data_dir,
        image_root: o.image_root.clone(),
        washout_override_days: o.washout_override_days,
        tokens,
    };
    let addr = o.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let app = AppState::load(config, Arc::new(SystemClock)).map_err(runtime)?;
    let rt = tokio::runtime::Runtime::new().runtime("starting runtime")?;
    println!("serving on http://{addr}");
    rt.block_on(mammocolor_study::serve(addr, app)).runtime("server")
}
