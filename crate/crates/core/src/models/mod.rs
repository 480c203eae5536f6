//! Network definitions: the TDCE encoder-decoder front end, the frozen
//! convolutional backbone stand-in, the MLP head, and the fixed encodings
//! (channel replication and colormaps) used as baselines.

mod backbone;
mod colormap;
mod head;
mod network;
mod tdce;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::diffcore::{DiffError, ParamSet, Tensor};
use crate::imaging::ImagingError;
use crate::Scalar;

pub use backbone::{Backbone, BackboneConfig, BackboneInit};
pub use colormap::{apply_colormap, Anchor, ColormapTable};
pub use head::{Head, HeadConfig};
pub use network::{image_batch, replicate_channels, tdce_encode, FrontEnd, Network, NetworkConfig, NetworkOutputs};
pub use tdce::{Tdce, TdceConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Image(#[from] ImagingError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {height}x{width} is not divisible by {multiple}; TDCE input sides must be multiples of {multiple}")]
    Indivisible { height: usize, width: usize, multiple: usize },
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("malformed colormap table: {0}")]
    Colormap(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// He-normal weights and zero bias for a `k x k` convolution.
pub(crate) fn init_conv<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut impl Rng,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    trainable: bool,
) -> Result<()> {
    let fan_in = (in_ch * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let w = Tensor::from_fn(&[out_ch, in_ch, k, k], |_| T::lit(normal.sample(rng)));
    params.insert(format!("{prefix}.w"), w, trainable)?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[out_ch]), trainable)?;
    Ok(())
}

pub(crate) fn init_dense<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut impl Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    trainable: bool,
) -> Result<()> {
    let normal = Normal::new(0.0, gain * (1.0 / fan_in as f64).sqrt()).expect("positive std");
    let w = Tensor::from_fn(&[fan_out, fan_in], |_| T::lit(normal.sample(rng)));
    params.insert(format!("{prefix}.w"), w, trainable)?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]), trainable)?;
    Ok(())
}
