//! MammoColor: a desk-scale implementation of task-driven chromatic encoding
//! (TDCE) for mammography triage.
//!
//! The crate covers the whole analytical path:
//!
//! * [`imaging`]: 16-bit PNG I/O, Otsu background removal, ROI cropping and
//!   aspect-preserving resize/pad/normalize.
//! * [`diffcore`]: a small reverse-mode tape with the operators needed to train a
//!   U-Net style encoder through a frozen convolutional backbone.
//! * [`models`]: the TDCE encoder-decoder, the frozen backbone stand-in, the MLP
//!   head and the fixed (non-learned) encodings used as baselines.
//! * [`pipeline`]: manifests, BI-RADS label mapping, patient-level splits,
//!   training regimes, checkpoints, prediction and breast-level aggregation.
//! * [`metrics`]: ROC/AUC, Youden operating points, paired DeLong, patient-level
//!   bootstrap, McNemar and subgroup tables.
//! * [`mrmc`]: observer-study planning and analysis, including Fleiss' kappa and a
//!   Laplace-approximated crossed random-intercept logistic model.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision instantiations used throughout training and testing.

pub mod diffcore;
pub mod imaging;
pub mod metrics;
pub mod models;
pub mod mrmc;
pub mod pipeline;
mod scalar;

pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Double-precision tensor.
pub type Tensor = diffcore::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = diffcore::Tensor<f32>;
/// Double-precision parameter set.
pub type ParamSet = diffcore::ParamSet<f64>;
/// Double-precision tape.
pub type Tape = diffcore::Tape<f64>;
/// Double-precision gradients.
pub type Gradients = diffcore::Gradients<f64>;
/// Normalized single-channel image in double precision.
pub type PreprocessedImage = imaging::PreprocessedImage<f64>;
/// Three-channel image in double precision.
pub type RgbImage = imaging::RgbImage<f64>;
pub use models::{ColormapTable, Network, NetworkConfig};
