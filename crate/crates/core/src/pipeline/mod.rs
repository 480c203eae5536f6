//! Dataset manifests, labels and splits, the training regimes, inference and
//! breast-level aggregation.

mod checkpoint;
mod experiment;
mod manifest;
mod predict;
mod selftest;
pub mod synth;
mod train;

use thiserror::Error;

pub use experiment::{run_directionality, DirectionalityConfig, DirectionalityRun};
pub use checkpoint::{Checkpoint, CheckpointMeta, MAGIC, SCHEMA_VERSION};
pub use manifest::{
    apportion, density_group, load_manifest, map_birads_to_label, parse_manifest, save_manifest, split_patients,
    write_manifest, Birads, CaseRecord, Density, DensityGroup, Finding, Laterality, Split, TriageLabel, View, ViewKey,
};
pub use predict::{
    aggregate_breast, predict_views, predict_views_with, read_predictions, write_predictions, PredictionFailure,
    PredictionRecord, ViewPredictions, PREDICTION_HEADER,
};
pub use selftest::{freezing_check, pipeline_grad_check, FreezingReport, NetworkLoss, PipelineGradCheck};
pub use train::{
    init_network_params, predict_images, train, train_gray_baseline, train_tdce, EpochLog, TrainConfig, TrainOutcome,
    TrainingRegime, TrainingSet,
};

use crate::diffcore::DiffError;
use crate::imaging::ImagingError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid BI-RADS: {0}")]
    Birads(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("breast aggregation: {0}")]
    Aggregation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    IoPlain(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Image(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
