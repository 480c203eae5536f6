use std::path::PathBuf;

use clap::Args;
use mammocolor::imaging::{preprocess as preprocess_image, write_gray_png, BoundingBox, DEFAULT_TARGET_SIZE};
use mammocolor::pipeline::synth::{generate, SynthConfig};
use mammocolor::pipeline::{save_manifest, split_patients, CaseRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_root, read_manifest, runtime};
use crate::config::{required, resolve, GlobalArgs};
use crate::error::{invalid, Result, RuntimeContext};
use crate::manifest::{write_json, Run};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub positive_rate: Option<f64>,
    /// Amplitude of the lesion texture (the class signal).
    #[arg(long)]
    pub texture_amplitude: Option<f64>,
    #[arg(long)]
    pub lesion_size: Option<usize>,
    #[arg(long)]
    pub background_amplitude: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Fraction of views relabelled BI-RADS 0.
    #[arg(long)]
    pub excluded_rate: Option<f64>,
    /// Black frame around each view so Otsu cropping has a background.
    #[arg(long)]
    pub border: Option<usize>,
}

pub fn synth(g: &GlobalArgs, args: &SynthArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let seed = r.seed()?;
    let o = &r.options;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_patients: o.n_patients.unwrap_or(d.n_patients),
        image_size: o.image_size.unwrap_or(d.image_size),
        positive_rate: o.positive_rate.unwrap_or(d.positive_rate),
        texture_amplitude: o.texture_amplitude.unwrap_or(d.texture_amplitude),
        lesion_size: o.lesion_size.unwrap_or(d.lesion_size),
        background_amplitude: o.background_amplitude.unwrap_or(d.background_amplitude),
        noise_sigma: o.noise_sigma.unwrap_or(d.noise_sigma),
        excluded_rate: o.excluded_rate.unwrap_or(d.excluded_rate),
        seed,
    };
    if cfg.n_patients == 0 || cfg.image_size == 0 || !(0.0..=1.0).contains(&cfg.positive_rate) || !(0.0..=1.0).contains(&cfg.excluded_rate) {
        return invalid("n_patients and image_size must be positive; rates must lie in [0, 1]");
    }
    let border = o.border.unwrap_or(4);
    let mut run = Run::new("synth", r.output_dir()?, &r);
    std::fs::create_dir_all(run.dir().join("images")).runtime("creating images/")?;
    let cases = generate(&cfg);
    let mut records = Vec::with_capacity(cases.len());
    for case in &cases {
        let mut rec = case.record.clone();
        rec.image_path = format!("images/{}", rec.image_path);
        let path = run.output(&rec.image_path);
        write_gray_png(&case.to_framed_raw(border), &path).map_err(runtime)?;
        records.push(rec);
    }
    save_manifest(&records, run.output("manifest.jsonl")).map_err(runtime)?;
    println!("synth: {} patients, {} views -> {}", cfg.n_patients, records.len(), run.dir().display());
    run.finish()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory image paths are relative to (default: the manifest's directory).
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Square output side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct PreprocessEntry {
    image_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    crop: Option<BoundingBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn preprocess(g: &GlobalArgs, args: &PreprocessArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let manifest = required(o.manifest.clone(), "manifest")?;
    let records = read_manifest(&manifest)?;
    let root = image_root(o.image_root.as_ref(), &manifest);
    let size = o.image_size.unwrap_or(DEFAULT_TARGET_SIZE);
    if size == 0 {
        return invalid("image_size must be positive");
    }
    let mut run = Run::new("preprocess", r.output_dir()?, &r);
    run.input(&manifest);
    std::fs::create_dir_all(run.dir().join("preprocessed")).runtime("creating preprocessed/")?;
    let dir = run.dir().to_path_buf();
    let results: Vec<(CaseRecord, PreprocessEntry)> = records
        .par_iter()
        .map(|rec| {
            let out_rel = format!("preprocessed/{}.png", super::file_stem(rec));
            let outcome = mammocolor::imaging::load_png16(root.join(&rec.image_path))
                .and_then(|raw| preprocess_image::<f64>(&raw, size, size))
                .and_then(|img| write_gray_png(&img.to_raw16(), dir.join(&out_rel)).map(|_| img.source_crop));
            let mut out = rec.clone();
            out.image_path = out_rel;
            let entry = match outcome {
                Ok(crop) => PreprocessEntry { image_path: rec.image_path.clone(), crop: Some(crop), error: None },
                Err(e) => PreprocessEntry { image_path: rec.image_path.clone(), crop: None, error: Some(e.to_string()) },
            };
            (out, entry)
        })
        .collect();
    let kept: Vec<CaseRecord> = results.iter().filter(|(_, e)| e.error.is_none()).map(|(r, _)| r.clone()).collect();
    for rec in &kept {
        run.output(&rec.image_path);
    }
    let failed = results.len() - kept.len();
    if kept.is_empty() {
        return Err(runtime(format!("every view failed to preprocess (first: {:?})", results.first().and_then(|(_, e)| e.error.clone()))));
    }
    save_manifest(&kept, run.output("manifest.jsonl")).map_err(runtime)?;
    let entries: Vec<&PreprocessEntry> = results.iter().map(|(_, e)| e).collect();
    write_json(&run.output("preprocess.json"), &entries)?;
    println!("preprocess: {} views at {size}x{size}, {failed} failed", kept.len());
    run.finish()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Train, validation and test fractions (default 0.7,0.1,0.2).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    partition: &'static str,
    patients: usize,
    views: usize,
}

pub fn split(g: &GlobalArgs, args: &SplitArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let seed = r.seed()?;
    let o = &r.options;
    let manifest = required(o.manifest.clone(), "manifest")?;
    let ratios = o.ratios.clone().unwrap_or_else(|| vec![0.7, 0.1, 0.2]);
    let ratios: [f64; 3] = ratios.try_into().map_err(|_| crate::CliError::Validation("ratios needs three values".into()))?;
    let records = read_manifest(&manifest)?;
    let parts = split_patients(&records, ratios, seed).map_err(|e| crate::CliError::Validation(e.to_string()))?;
    let mut run = Run::new("split", r.output_dir()?, &r);
    run.input(&manifest);
    let mut summary = Vec::new();
    for (name, recs) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        save_manifest(recs, run.output(&format!("{name}.jsonl"))).map_err(runtime)?;
        let patients: std::collections::BTreeSet<&str> = recs.iter().map(|r| r.patient_id.as_str()).collect();
        println!("{name}: {} patients, {} views", patients.len(), recs.len());
        summary.push(SplitSummary { partition: name, patients: patients.len(), views: recs.len() });
    }
    write_json(&run.output("split.json"), &summary)?;
    run.finish()
}
