use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_conv, ModelError, Result};
use crate::diffcore::{Padding, ParamSet, Tape, Var};
use crate::Scalar;

/// Shape of the U-Net style chromatic encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdceConfig {
    /// Number of 2x downsampling levels.
    pub depth: usize,
    /// Channels at full resolution; level `l` uses `base_channels << l`.
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for TdceConfig {
    fn default() -> Self {
        TdceConfig { depth: 3, base_channels: 16, in_channels: 1, out_channels: 3 }
    }
}

impl TdceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels != 3 {
            return Err(ModelError::Config(format!("TDCE must emit 3 channels, got {}", self.out_channels)));
        }
        if self.in_channels != 1 {
            return Err(ModelError::Config(format!("TDCE consumes 1 channel, got {}", self.in_channels)));
        }
        if self.depth == 0 || self.base_channels == 0 {
            return Err(ModelError::Config("TDCE depth and base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        1 << self.depth
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Encoder: two 3x3 conv + ReLU per level, then 2x2 max-pool. Bottleneck keeps
/// the deepest width. Decoder: nearest 2x upsample, concat with the matching
/// encoder output, two 3x3 conv + ReLU. A 1x1 conv to RGB and a sigmoid close
/// the network so every output lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tdce {
    config: TdceConfig,
}

impl Tdce {
    pub fn new(config: TdceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tdce { config })
    }

    pub fn config(&self) -> &TdceConfig {
        &self.config
    }

    pub fn init_params<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng, trainable: bool) -> Result<()> {
        let c = &self.config;
        let mut prev = c.in_channels;
        for l in 0..c.depth {
            let ch = c.level_channels(l);
            init_conv(params, rng, &format!("tdce.enc{l}.conv1"), prev, ch, 3, trainable)?;
            init_conv(params, rng, &format!("tdce.enc{l}.conv2"), ch, ch, 3, trainable)?;
            prev = ch;
        }
        init_conv(params, rng, "tdce.mid.conv1", prev, prev, 3, trainable)?;
        init_conv(params, rng, "tdce.mid.conv2", prev, prev, 3, trainable)?;
        for l in (0..c.depth).rev() {
            let ch = c.level_channels(l);
            init_conv(params, rng, &format!("tdce.dec{l}.conv1"), prev + ch, ch, 3, trainable)?;
            init_conv(params, rng, &format!("tdce.dec{l}.conv2"), ch, ch, 3, trainable)?;
            prev = ch;
        }
        init_conv(params, rng, "tdce.out", prev, c.out_channels, 1, trainable)
    }

    fn conv_relu<T: Scalar>(tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, name: &str) -> Result<Var> {
        let w = tape.param(params, &format!("{name}.w"))?;
        let b = tape.param(params, &format!("{name}.b"))?;
        let y = tape.conv2d(x, w, b, 1, Padding::Same)?;
        Ok(tape.relu(y))
    }

    /// `[N, 1, H, W] -> [N, 3, H, W]` with values in `[0, 1]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let m = self.config.required_multiple();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(ModelError::Shape(format!("TDCE expects [N, 1, H, W], got {shape:?}")));
        }
        if !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(ModelError::Indivisible { height: shape[2], width: shape[3], multiple: m });
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for l in 0..self.config.depth {
            h = Self::conv_relu(tape, params, h, &format!("tdce.enc{l}.conv1"))?;
            h = Self::conv_relu(tape, params, h, &format!("tdce.enc{l}.conv2"))?;
            skips.push(h);
            h = tape.max_pool2(h)?;
        }
        h = Self::conv_relu(tape, params, h, "tdce.mid.conv1")?;
        h = Self::conv_relu(tape, params, h, "tdce.mid.conv2")?;
        for l in (0..self.config.depth).rev() {
            let up = tape.upsample2(h)?;
            let skip = skips[l];
            let (us, ss) = (tape.value(up).shape(), tape.value(skip).shape());
            assert_eq!(us[2..], ss[2..], "decoder level {l} must match its encoder skip");
            let cat = tape.concat(up, skip)?;
            h = Self::conv_relu(tape, params, cat, &format!("tdce.dec{l}.conv1"))?;
            h = Self::conv_relu(tape, params, h, &format!("tdce.dec{l}.conv2"))?;
        }
        let w = tape.param(params, "tdce.out.w")?;
        let b = tape.param(params, "tdce.out.b")?;
        let logits = tape.conv2d(h, w, b, 1, Padding::Valid)?;
        Ok(tape.sigmoid(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::SeedableRng;

    #[test]
    fn config_validation() {
        assert!(TdceConfig { out_channels: 4, ..Default::default() }.validate().is_err());
        assert!(TdceConfig { depth: 0, ..Default::default() }.validate().is_err());
        assert_eq!(TdceConfig::default().required_multiple(), 8);
    }

    #[test]
    fn output_shape_and_range() {
        let tdce = Tdce::new(TdceConfig { depth: 2, base_channels: 4, ..Default::default() }).unwrap();
        let mut params = ParamSet::<f64>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        tdce.init_params(&mut params, &mut rng, true).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[2, 1, 8, 12], |i| (i % 7) as f64 / 7.0));
        let y = tdce.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3, 8, 12]);
        assert!(tape.value(y).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn indivisible_input_names_the_multiple() {
        let tdce = Tdce::new(TdceConfig::default()).unwrap();
        let mut params = ParamSet::<f64>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        tdce.init_params(&mut params, &mut rng, true).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 1, 12, 16]));
        let err = tdce.forward(&mut tape, &params, x).unwrap_err();
        assert!(matches!(err, ModelError::Indivisible { multiple: 8, .. }));
        assert!(err.to_string().contains("multiples of 8"));
    }
}
