use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, SCHEMA_VERSION};
use super::{PipelineError, Result};
use crate::diffcore::{Optimizer, OptimizerConfig, ParamSet, Tape, Tensor, Var};
use crate::imaging::PreprocessedImage;
use crate::metrics::roc_auc;
use crate::models::{image_batch, BackboneInit, FrontEnd, Network, NetworkConfig, TdceConfig};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRegime {
    /// Learned encoder in front of a frozen backbone; encoder and head train.
    Tdce,
    /// Channel replication; last backbone stage and head train.
    GrayPartial,
    /// Channel replication; only the head trains.
    GrayFrozen,
}

impl TrainingRegime {
    /// Applies this regime's front end and trainable subset to `base`. The
    /// TDCE shape is taken from `base` when it already has one.
    pub fn configure(self, base: &NetworkConfig) -> NetworkConfig {
        let mut c = base.clone();
        let mut backbone = c.backbone.clone();
        backbone.frozen = true;
        backbone.trainable_stages = None;
        match self {
            TrainingRegime::Tdce => {
                if !matches!(c.front_end, FrontEnd::Tdce(_)) {
                    c.front_end = FrontEnd::Tdce(TdceConfig::default());
                }
            }
            TrainingRegime::GrayPartial => {
                c.front_end = FrontEnd::Replicate;
                backbone = backbone.last_stage_only();
            }
            TrainingRegime::GrayFrozen => c.front_end = FrontEnd::Replicate,
        }
        c.backbone = backbone;
        c
    }
}

fn default_batch() -> usize {
    16
}

fn default_epochs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Required; drives initialization and batch order.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig { optimizer: OptimizerConfig::default(), batch_size: default_batch(), epochs: default_epochs(), seed }
    }
}

/// Labelled images as one `[N, 1, H, W]` tensor.
#[derive(Debug, Clone)]
pub struct TrainingSet<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<bool>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(images: &[PreprocessedImage<T>], labels: Vec<bool>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(PipelineError::Config("image and label counts differ".into()));
        }
        if images.is_empty() {
            return Err(PipelineError::Config("empty training set".into()));
        }
        let refs: Vec<_> = images.iter().collect();
        Ok(TrainingSet { images: image_batch(&refs)?, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub network: Network,
    pub initial: ParamSet<T>,
    /// Parameters from the best validation epoch.
    pub params: ParamSet<T>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub checkpoint: Checkpoint,
}

pub(crate) fn gather<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("row-aligned gather")
}

/// Parameters for `net`, with the backbone taken from an external checkpoint
/// when the config asks for one.
pub fn init_network_params<T: Scalar>(net: &Network, seed: u64) -> Result<ParamSet<T>> {
    let mut params = net.init_params::<T>(seed)?;
    if let BackboneInit::ExternalCheckpoint { path } = &net.config().backbone.init {
        let ext = Checkpoint::load(path)?;
        let names: Vec<String> = params.names().filter(|n| n.starts_with("backbone.")).map(String::from).collect();
        for name in names {
            let src = ext
                .params
                .tensor(&name)
                .map_err(|_| PipelineError::Checkpoint(format!("{path} lacks '{name}'")))?;
            let dst = params.tensor_mut(&name)?;
            if src.shape() != dst.shape() {
                return Err(PipelineError::Checkpoint(format!(
                    "'{name}' has shape {:?} in {path}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        net.backbone().apply_flags(&mut params);
    }
    Ok(params)
}

/// Where the trainable part of the graph starts. Everything before it is
/// computed once per image and reused across epochs.
enum Stage {
    Full,
    Backbone(usize),
    Head,
}

struct Runner<'a> {
    net: &'a Network,
    stage: Stage,
}

impl Runner<'_> {
    fn new(net: &Network) -> Runner<'_> {
        let k = net.frozen_prefix();
        let stage = if k == 0 {
            Stage::Full
        } else if k == net.config().backbone.stages() {
            Stage::Head
        } else {
            Stage::Backbone(k)
        };
        Runner { net, stage }
    }

    /// Frozen prefix applied to a batch of raw images.
    fn precompute<T: Scalar>(&self, params: &ParamSet<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        if matches!(self.stage, Stage::Full) {
            return Ok(images.clone());
        }
        let n = images.shape()[0];
        let chunk = 64;
        let parts: Vec<Result<Tensor<T>>> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let idx: Vec<usize> = (c * chunk..((c + 1) * chunk).min(n)).collect();
                let mut tape = Tape::new();
                let x = tape.input(gather(images, &idx));
                let rgb = self.net.front_end(&mut tape, params, x)?;
                let out = match self.stage {
                    Stage::Backbone(k) => self.net.backbone().forward_stages(&mut tape, params, rgb, 0..k)?,
                    _ => self.net.classifier(&mut tape, params, rgb)?.0,
                };
                Ok(tape.value(out).clone())
            })
            .collect();
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())?)
    }

    fn logits<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        Ok(match self.stage {
            Stage::Full => self.net.forward(tape, params, x)?.logits,
            Stage::Backbone(k) => {
                let b = self.net.backbone();
                let h = b.forward_stages(tape, params, x, k..b.config().stages())?;
                let f = tape.global_avg_pool(h)?;
                self.net.head_forward(tape, params, f)?
            }
            Stage::Head => self.net.head_forward(tape, params, x)?,
        })
    }

    /// Probabilities and mean BCE over a precomputed set.
    fn evaluate<T: Scalar>(&self, params: &ParamSet<T>, inputs: &Tensor<T>, labels: &[bool]) -> Result<(Vec<f64>, f64)> {
        let n = labels.len();
        let chunk = 64;
        let parts: Vec<Result<Vec<f64>>> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let idx: Vec<usize> = (c * chunk..((c + 1) * chunk).min(n)).collect();
                let mut tape = Tape::new();
                let x = tape.input(gather(inputs, &idx));
                let z = self.logits(&mut tape, params, x)?;
                Ok(tape.value(z).data().iter().map(|v| v.f64()).collect())
            })
            .collect();
        let logits: Vec<f64> = parts.into_iter().collect::<Result<Vec<_>>>()?.concat();
        let loss = logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - if y { z } else { 0.0 } + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n as f64;
        Ok((logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect(), loss))
    }
}

/// Mini-batch training with best-epoch selection by validation AUC (ties go
/// to the earlier epoch; validation loss decides when AUC is undefined).
pub fn train<T: Scalar>(
    regime: TrainingRegime,
    base: &NetworkConfig,
    cfg: &TrainConfig,
    train_set: &TrainingSet<T>,
    val_set: Option<&TrainingSet<T>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(PipelineError::Config("batch_size and epochs must be positive".into()));
    }
    let net = Network::new(regime.configure(base))?;
    let initial = init_network_params::<T>(&net, cfg.seed)?;
    let mut params = initial.clone();
    let runner = Runner::new(&net);
    let train_inputs = runner.precompute(&params, &train_set.images)?;
    let val_inputs = val_set.map(|v| runner.precompute(&params, &v.images)).transpose()?;
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<((f64, f64), usize, ParamSet<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let targets: Vec<T> = idx.iter().map(|&i| if train_set.labels[i] { T::one() } else { T::zero() }).collect();
            let mut tape = Tape::new();
            let x = tape.input(gather(&train_inputs, idx));
            let z = runner.logits(&mut tape, &params, x)?;
            let loss = tape.bce_with_logits(z, &targets)?;
            let value = tape.value(loss).data()[0].f64();
            if !value.is_finite() {
                return Err(PipelineError::NonFiniteLoss { epoch, batch: bi, loss: value });
            }
            total += value * idx.len() as f64;
            let grads = tape.backward(loss, Tensor::scalar(T::one()))?;
            opt.step(&mut params, &grads)?;
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, val_auc) = match (val_set, &val_inputs) {
            (Some(v), Some(inputs)) => {
                let (probs, loss) = runner.evaluate(&params, inputs, &v.labels)?;
                (Some(loss), roc_auc(&probs, &v.labels).ok())
            }
            _ => (None, None),
        };
        let log = EpochLog { epoch, train_loss, val_loss, val_auc };
        on_epoch(&log);
        history.push(log);
        let key = match val_loss {
            Some(l) => (val_auc.unwrap_or(f64::NEG_INFINITY), -l),
            None => (epoch as f64, 0.0),
        };
        if best.as_ref().is_none_or(|(k, _, _)| key.0 > k.0 || (key.0 == k.0 && key.1 > k.1)) {
            best = Some((key, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let b = &net.config().backbone;
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        network: net.config().clone(),
        regime: Some(regime),
        training: Some(cfg.clone()),
        seed: cfg.seed,
        trainable_backbone_stages: (0..b.stages()).filter(|&i| b.stage_trainable(i)).collect(),
        best_epoch: Some(best_epoch),
        best_val_auc: history[best_epoch - 1].val_auc,
        youden_threshold: None,
    };
    let checkpoint = Checkpoint::new(&meta, best_params.cast())?;
    Ok(TrainOutcome { network: net, initial, params: best_params, history, best_epoch, checkpoint })
}

/// TDCE regime: the backbone must already be flagged frozen.
pub fn train_tdce<T: Scalar>(
    base: &NetworkConfig,
    cfg: &TrainConfig,
    train_set: &TrainingSet<T>,
    val_set: Option<&TrainingSet<T>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    if !base.backbone.frozen {
        return Err(PipelineError::Config("TDCE training requires a frozen backbone".into()));
    }
    train(TrainingRegime::Tdce, base, cfg, train_set, val_set, on_epoch)
}

/// Channel-replication baseline with the last backbone stage fine-tuned.
pub fn train_gray_baseline<T: Scalar>(
    base: &NetworkConfig,
    cfg: &TrainConfig,
    train_set: &TrainingSet<T>,
    val_set: Option<&TrainingSet<T>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    train(TrainingRegime::GrayPartial, base, cfg, train_set, val_set, on_epoch)
}

/// Probabilities for a `[N, 1, H, W]` batch, evaluated in parallel chunks.
pub fn predict_images<T: Scalar>(net: &Network, params: &ParamSet<T>, images: &Tensor<T>) -> Result<Vec<f64>> {
    let n = images.shape()[0];
    let labels = vec![false; n];
    let runner = Runner { net, stage: Stage::Full };
    Ok(runner.evaluate(params, images, &labels)?.0)
}
