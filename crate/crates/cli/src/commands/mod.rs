pub mod data;
pub mod evaluate;
pub mod model;
pub mod selftest;
pub mod study;

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mammocolor::imaging::{load_png16, preprocess, PreprocessedImage};
use mammocolor::pipeline::{load_manifest, CaseRecord};
use serde::{Deserialize, Serialize};

use crate::config::existing;
use crate::error::{CliError, Result, ValidationContext};

/// How the PNGs referenced by a manifest are turned into network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum InputKind {
    /// Full preprocessing (Otsu, ROI crop, resize/pad/normalize).
    #[default]
    Raw,
    /// Already preprocessed to the network size by `preprocess`.
    Preprocessed,
}

pub fn load_view(root: &Path, record: &CaseRecord, kind: InputKind, h: usize, w: usize) -> anyhow::Result<PreprocessedImage<f64>> {
    let raw = load_png16(root.join(&record.image_path))?;
    match kind {
        InputKind::Raw => Ok(preprocess(&raw, h, w)?),
        InputKind::Preprocessed => {
            if (raw.height(), raw.width()) != (h, w) {
                anyhow::bail!("{} is {}x{}, expected {h}x{w}", record.image_path, raw.height(), raw.width());
            }
            let max = raw.bit_depth().max_value() as f64;
            let values = raw.pixels().iter().map(|&p| p as f64 / max).collect();
            Ok(PreprocessedImage::new(h, w, values)?)
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<CaseRecord>> {
    load_manifest(existing(path)?).invalid_input(&format!("manifest {}", path.display()))
}

/// Images are looked up relative to this directory: the explicit root, else
/// the manifest's own directory.
pub fn image_root(explicit: Option<&PathBuf>, manifest: &Path) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

pub fn file_stem(record: &CaseRecord) -> String {
    format!("{}_{}_{:?}_{:?}", record.patient_id, record.study_id, record.laterality, record.view)
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(anyhow::anyhow!("{e}"))
}
