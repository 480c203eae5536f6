use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mammocolor::diffcore::{OptimizerConfig, ParamSet};
use mammocolor::imaging::{write_rgb_png, BitDepth, PreprocessedImage, DEFAULT_TARGET_SIZE};
use mammocolor::metrics::youden_threshold;
use mammocolor::models::{apply_colormap, replicate_channels, BackboneInit, ColormapTable, FrontEnd, Network, NetworkConfig, TdceConfig};
use mammocolor::pipeline::{
    aggregate_breast, predict_images, predict_views_with, train as fit, write_predictions, CaseRecord, Checkpoint,
    PipelineError, TrainConfig, TrainingRegime, TrainingSet,
};
use mammocolor::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{file_stem, image_root, load_view, read_manifest, runtime, InputKind};
use crate::config::{existing, required, resolve, GlobalArgs};
use crate::error::{invalid, CliError, Result, RuntimeContext, ValidationContext};
use crate::manifest::{write_json, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Regime {
    /// Learned chromatic encoder, frozen backbone.
    Tdce,
    /// Channel replication with the last backbone stage fine-tuned.
    GrayBaseline,
}

impl Regime {
    fn training(self) -> TrainingRegime {
        match self {
            Regime::Tdce => TrainingRegime::Tdce,
            Regime::GrayBaseline => TrainingRegime::GrayPartial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Used for best-epoch selection and the Youden threshold.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub input: Option<InputKind>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub tdce_depth: Option<usize>,
    #[arg(long)]
    pub tdce_base_channels: Option<usize>,
    /// Checkpoint whose `backbone.*` tensors initialize the backbone.
    #[arg(long)]
    pub backbone_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Full network description (config file only); overrides the size and
    /// TDCE flags.
    #[arg(skip)]
    pub network: Option<NetworkConfig>,
}

type Labelled = (Vec<PreprocessedImage<f64>>, Vec<bool>);

/// Loads every view with a definite label. Unreadable images are an input error.
fn load_labelled(records: &[CaseRecord], root: &Path, input: InputKind, h: usize, w: usize) -> Result<Labelled> {
    let loaded: Vec<(String, anyhow::Result<PreprocessedImage<f64>>, Option<bool>)> = records
        .par_iter()
        .filter_map(|r| {
            let y = r.label().as_bool()?;
            Some((r.image_path.clone(), load_view(root, r, input, h, w), Some(y)))
        })
        .collect();
    let mut images = Vec::with_capacity(loaded.len());
    let mut labels = Vec::with_capacity(loaded.len());
    for (path, img, y) in loaded {
        images.push(img.map_err(|e| CliError::Validation(format!("{path}: {e:#}")))?);
        labels.push(y.expect("filtered"));
    }
    Ok((images, labels))
}

fn to_set<T: Scalar>((images, labels): &Labelled) -> Result<TrainingSet<T>> {
    let cast: Vec<PreprocessedImage<T>> = images
        .iter()
        .map(|i| PreprocessedImage::new(i.height, i.width, i.values.iter().map(|&v| T::lit(v)).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(runtime)?;
    TrainingSet::new(&cast, labels.clone()).map_err(runtime)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    regime: Regime,
    best_epoch: usize,
    best_val_auc: Option<f64>,
    youden_threshold: Option<f64>,
    n_train: usize,
    n_val: usize,
    history: Vec<mammocolor::pipeline::EpochLog>,
}

fn train_as<T: Scalar>(
    regime: TrainingRegime,
    base: &NetworkConfig,
    cfg: &TrainConfig,
    train: &Labelled,
    val: Option<&Labelled>,
) -> Result<(Checkpoint, Vec<mammocolor::pipeline::EpochLog>, usize, Option<f64>)> {
    let train_set = to_set::<T>(train)?;
    let val_set = val.map(to_set::<T>).transpose()?;
    let mut log = |l: &mammocolor::pipeline::EpochLog| {
        tracing::info!(epoch = l.epoch, train_loss = l.train_loss, val_loss = ?l.val_loss, val_auc = ?l.val_auc, "epoch");
    };
    let out = fit(regime, base, cfg, &train_set, val_set.as_ref(), &mut log).map_err(|e| match e {
        PipelineError::Config(m) => CliError::Validation(m),
        other => runtime(other),
    })?;
    let threshold = match &val_set {
        Some(v) => {
            let scores = predict_images(&out.network, &out.params, &v.images).map_err(runtime)?;
            youden_threshold(&scores, &v.labels).ok()
        }
        None => None,
    };
    let mut ckpt = out.checkpoint;
    let mut meta = ckpt.metadata().map_err(runtime)?;
    meta.youden_threshold = threshold;
    ckpt.set_metadata(&meta).map_err(runtime)?;
    Ok((ckpt, out.history, out.best_epoch, threshold))
}

pub fn train(g: &GlobalArgs, args: &TrainArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let seed = r.seed()?;
    let o = &r.options;
    let regime = required(o.regime, "regime")?;
    let train_manifest = required(o.train_manifest.clone(), "train_manifest")?;
    let input = o.input.unwrap_or_default();
    let mut base = match &o.network {
        Some(n) => n.clone(),
        None => {
            let size = o.image_size.unwrap_or(DEFAULT_TARGET_SIZE);
            let d = TdceConfig::default();
            let tdce = TdceConfig {
                depth: o.tdce_depth.unwrap_or(d.depth),
                base_channels: o.tdce_base_channels.unwrap_or(d.base_channels),
                ..d
            };
            NetworkConfig { front_end: FrontEnd::Tdce(tdce), ..NetworkConfig::tdce(size) }
        }
    };
    if let Some(p) = &o.backbone_checkpoint {
        base.backbone.init = BackboneInit::ExternalCheckpoint { path: existing(p)?.display().to_string() };
    }
    Network::new(regime.training().configure(&base)).invalid_input("network")?;
    let d = TrainConfig::new(seed);
    let cfg = TrainConfig {
        optimizer: o.lr.map(OptimizerConfig::adam).unwrap_or(d.optimizer),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        epochs: o.epochs.unwrap_or(d.epochs),
        seed,
    };

    let mut run = Run::new("train", r.output_dir()?, &r);
    let (h, w) = (base.input_height, base.input_width);
    let root = image_root(o.image_root.as_ref(), &train_manifest);
    let train_records = read_manifest(&train_manifest)?;
    run.input(&train_manifest);
    let train_data = load_labelled(&train_records, &root, input, h, w)?;
    if train_data.1.is_empty() {
        return invalid("training manifest has no labelled views");
    }
    let val_data = match &o.val_manifest {
        Some(p) => {
            run.input(p);
            Some(load_labelled(&read_manifest(p)?, &image_root(o.image_root.as_ref(), p), input, h, w)?)
        }
        None => None,
    };
    if let Some(p) = &o.backbone_checkpoint {
        run.input(p);
    }
    let (ckpt, history, best_epoch, threshold) = match o.precision.unwrap_or_default() {
        Precision::F32 => train_as::<f32>(regime.training(), &base, &cfg, &train_data, val_data.as_ref())?,
        Precision::F64 => train_as::<f64>(regime.training(), &base, &cfg, &train_data, val_data.as_ref())?,
    };
    ckpt.save(run.output("model.ckpt")).map_err(runtime)?;
    let summary = TrainSummary {
        regime,
        best_epoch,
        best_val_auc: history[best_epoch - 1].val_auc,
        youden_threshold: threshold,
        n_train: train_data.1.len(),
        n_val: val_data.as_ref().map_or(0, |v| v.1.len()),
        history,
    };
    write_json(&run.output("training.json"), &summary)?;
    println!(
        "train: {:?} best epoch {} val AUC {} threshold {}",
        regime,
        best_epoch,
        summary.best_val_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        threshold.map_or("n/a".into(), |t| format!("{t:.4}"))
    );
    run.finish()
}

pub fn load_model(path: &Path) -> Result<(Network, ParamSet<f64>, Option<f64>)> {
    let ckpt = Checkpoint::load(existing(path)?).invalid_input(&format!("checkpoint {}", path.display()))?;
    let meta = ckpt.metadata().invalid_input(&format!("checkpoint {}", path.display()))?;
    let net = Network::new(meta.network).invalid_input("checkpoint network")?;
    Ok((net, ckpt.params, meta.youden_threshold))
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub input: Option<InputKind>,
    /// Trained TDCE checkpoint; without one only fixed encodings are written.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input size when no checkpoint fixes it.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Fixed colormap for the comparison rendering (heat or grayscale).
    #[arg(long)]
    pub colormap: Option<String>,
}

pub fn encode(g: &GlobalArgs, args: &EncodeArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let manifest = required(o.manifest.clone(), "manifest")?;
    let cmap_name = o.colormap.clone().unwrap_or_else(|| "heat".into());
    let table = ColormapTable::by_name(&cmap_name)
        .ok_or_else(|| CliError::Validation(format!("unknown colormap '{cmap_name}'")))?;
    let model = o.checkpoint.as_deref().map(load_model).transpose()?;
    if let Some((net, _, _)) = &model {
        if net.tdce().is_none() {
            return invalid("checkpoint has no TDCE front end");
        }
    }
    let (h, w) = match &model {
        Some((net, _, _)) => (net.config().input_height, net.config().input_width),
        None => {
            let s = o.image_size.unwrap_or(DEFAULT_TARGET_SIZE);
            (s, s)
        }
    };
    let records = read_manifest(&manifest)?;
    let root = image_root(o.image_root.as_ref(), &manifest);
    let mut run = Run::new("encode", r.output_dir()?, &r);
    run.input(&manifest);
    if let Some(p) = &o.checkpoint {
        run.input(p);
    }
    let mut kinds = vec!["replicated".to_string(), format!("colormap-{cmap_name}")];
    if model.is_some() {
        kinds.push("tdce".into());
    }
    for k in &kinds {
        std::fs::create_dir_all(run.dir().join("encoded").join(k)).runtime("creating encoded/")?;
    }
    let dir = run.dir().to_path_buf();
    let written: Vec<Vec<String>> = records
        .par_iter()
        .map(|rec| -> Result<Vec<String>> {
            let img = load_view(&root, rec, o.input.unwrap_or_default(), h, w)
                .map_err(|e| CliError::Validation(format!("{}: {e:#}", rec.image_path)))?;
            let stem = file_stem(rec);
            let mut out = Vec::new();
            let mut put = |kind: &str, rgb: &mammocolor::imaging::RgbImage<f64>| -> Result<()> {
                let rel = format!("encoded/{kind}/{stem}.png");
                write_rgb_png(rgb, dir.join(&rel), BitDepth::Sixteen).map_err(runtime)?;
                out.push(rel);
                Ok(())
            };
            put("replicated", &replicate_channels(&img))?;
            put(&format!("colormap-{cmap_name}"), &apply_colormap(&img, &table))?;
            if let Some((net, params, _)) = &model {
                put("tdce", &net.encode(params, &img).map_err(runtime)?)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    for rel in written.iter().flatten() {
        run.output(rel);
    }
    println!("encode: {} views x {} renderings", records.len(), kinds.len());
    run.finish()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub input: Option<InputKind>,
}

pub fn predict(g: &GlobalArgs, args: &PredictArgs) -> Result<()> {
    let r = resolve(g, args)?;
    let o = &r.options;
    let ckpt_path = required(o.checkpoint.clone(), "checkpoint")?;
    let manifest = required(o.manifest.clone(), "manifest")?;
    let (net, params, threshold) = load_model(&ckpt_path)?;
    let records = read_manifest(&manifest)?;
    let root = image_root(o.image_root.as_ref(), &manifest);
    let input = o.input.unwrap_or_default();
    let (h, w) = (net.config().input_height, net.config().input_width);
    let mut run = Run::new("predict", r.output_dir()?, &r);
    run.input(&ckpt_path);
    run.input(&manifest);
    let preds = predict_views_with(&net, &params, &records, |rec| {
        load_view(&root, rec, input, h, w).map_err(|e| PipelineError::Parse(format!("{e:#}")))
    });
    if preds.records.is_empty() && !records.is_empty() {
        return Err(runtime(format!(
            "no view could be scored (first failure: {})",
            preds.failures.first().map_or("", |f| f.error.as_str())
        )));
    }
    let breasts = aggregate_breast(&preds.records).map_err(runtime)?;
    let csv = |path: PathBuf, recs: &[mammocolor::pipeline::PredictionRecord]| -> Result<()> {
        let f = std::fs::File::create(&path).runtime(&format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(f);
        write_predictions(recs, &mut w).map_err(runtime)?;
        std::io::Write::flush(&mut w).runtime("writing predictions")
    };
    csv(run.output("view_predictions.csv"), &preds.records)?;
    csv(run.output("breast_predictions.csv"), &breasts)?;
    write_json(&run.output("failures.json"), &preds.failures)?;
    println!(
        "predict: {} views, {} breasts, {} failures (checkpoint threshold {})",
        preds.records.len(),
        breasts.len(),
        preds.failures.len(),
        threshold.map_or("n/a".into(), |t| format!("{t:.4}"))
    );
    run.finish()
}
