use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::synth::{generate, SynthConfig};
use super::{predict_images, EpochLog, split_patients, train, PipelineError, Result, TrainConfig, TrainingRegime, TrainingSet};
use crate::diffcore::OptimizerConfig;
use crate::imaging::PreprocessedImage;
use crate::metrics::{delong_paired, DelongResult};
use crate::models::{BackboneConfig, FrontEnd, HeadConfig, NetworkConfig, TdceConfig};
use crate::Scalar;

/// Synthetic comparison of the TDCE regime against the frozen-backbone
/// channel-replication regime on identical data, splits and backbone weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalityConfig {
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub split: [f64; 3],
}

impl Default for DirectionalityConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let size = synth.image_size;
        DirectionalityConfig {
            network: NetworkConfig {
                front_end: FrontEnd::Tdce(TdceConfig { depth: 2, base_channels: 8, ..Default::default() }),
                backbone: BackboneConfig::default(),
                head: HeadConfig::default(),
                input_height: size,
                input_width: size,
            },
            train: TrainConfig { optimizer: OptimizerConfig::adam(3e-3), batch_size: 16, epochs: 20, seed: 0 },
            split: [0.6, 0.2, 0.2],
            synth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalityRun {
    pub seed: u64,
    pub n_test: usize,
    /// Model A is the replication baseline, model B the TDCE regime.
    pub delong: DelongResult,
    pub tdce_best_epoch: usize,
    pub gray_best_epoch: usize,
    pub seconds: f64,
}

fn subset<T: Scalar>(images: &[(String, PreprocessedImage<T>, bool)], ids: &[String]) -> Result<TrainingSet<T>> {
    let keep: std::collections::HashSet<&String> = ids.iter().collect();
    let (imgs, labels): (Vec<_>, Vec<_>) = images
        .iter()
        .filter(|(p, _, _)| keep.contains(p))
        .map(|(_, i, l)| (i.clone(), *l))
        .unzip();
    TrainingSet::new(&imgs, labels)
}

/// One seed: generate data, split by patient, train both regimes, compare
/// test AUCs with DeLong.
pub fn run_directionality<T: Scalar>(
    cfg: &DirectionalityConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(TrainingRegime, &EpochLog),
) -> Result<DirectionalityRun> {
    let start = Instant::now();
    let synth = SynthConfig { seed, ..cfg.synth.clone() };
    let cases = generate(&synth);
    let records: Vec<_> = cases.iter().map(|c| c.record.clone()).collect();
    let split = split_patients(&records, cfg.split, seed)?;
    let images: Vec<(String, PreprocessedImage<T>, bool)> = cases
        .iter()
        .filter_map(|c| {
            let truth = c.record.label().as_bool()?;
            let values = c.image.values.iter().map(|&v| T::lit(v)).collect();
            let img = PreprocessedImage::new(c.image.height, c.image.width, values).ok()?;
            Some((c.record.patient_id.clone(), img, truth))
        })
        .collect();
    let ids = |v: &[super::CaseRecord]| v.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>();
    let train_set = subset(&images, &ids(&split.train))?;
    let val_set = subset(&images, &ids(&split.val))?;
    let test_set = subset(&images, &ids(&split.test))?;
    let tcfg = TrainConfig { seed, ..cfg.train.clone() };
    let tdce = train(TrainingRegime::Tdce, &cfg.network, &tcfg, &train_set, Some(&val_set), &mut |l| on_epoch(TrainingRegime::Tdce, l))?;
    let gray = train(TrainingRegime::GrayFrozen, &cfg.network, &tcfg, &train_set, Some(&val_set), &mut |l| {
        on_epoch(TrainingRegime::GrayFrozen, l)
    })?;
    let pa = predict_images(&gray.network, &gray.params, &test_set.images)?;
    let pb = predict_images(&tdce.network, &tdce.params, &test_set.images)?;
    let delong = delong_paired(&pa, &pb, &test_set.labels).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(DirectionalityRun {
        seed,
        n_test: test_set.len(),
        delong,
        tdce_best_epoch: tdce.best_epoch,
        gray_best_epoch: gray.best_epoch,
        seconds: start.elapsed().as_secs_f64(),
    })
}
