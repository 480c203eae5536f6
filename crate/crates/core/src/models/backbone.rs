use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_conv, ModelError, Result};
use crate::diffcore::{Padding, ParamSet, Tape, Var};
use crate::Scalar;

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneInit {
    SeededRandom,
    /// An MMC1 checkpoint whose `backbone.*` tensors replace the seeded init.
    ExternalCheckpoint { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub frozen: bool,
    /// Stages (counted from the input) that stay trainable even when
    /// `frozen` is false. `None` means all stages.
    #[serde(default)]
    pub trainable_stages: Option<Vec<usize>>,
    pub init: BackboneInit,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            widths: vec![16, 32, 64, 128],
            in_channels: 3,
            frozen: true,
            trainable_stages: None,
            init: BackboneInit::SeededRandom,
        }
    }
}

impl BackboneConfig {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(ModelError::Config("backbone needs at least one stage of positive width".into()));
        }
        if self.in_channels != 3 {
            return Err(ModelError::Config(format!("backbone consumes 3 channels, got {}", self.in_channels)));
        }
        if let Some(stages) = &self.trainable_stages {
            if let Some(&s) = stages.iter().find(|&&s| s >= self.widths.len()) {
                return Err(ModelError::Config(format!("trainable stage {s} out of range")));
            }
        }
        Ok(())
    }

    pub fn stage_trainable(&self, stage: usize) -> bool {
        if self.frozen {
            return false;
        }
        match &self.trainable_stages {
            None => true,
            Some(s) => s.contains(&stage),
        }
    }

    /// Partial fine-tuning split: only the last stage trains.
    pub fn last_stage_only(mut self) -> Self {
        self.frozen = false;
        self.trainable_stages = Some(vec![self.widths.len() - 1]);
        self
    }
}

/// Stage `i`: 3x3 conv (stride 1 for the first stage, 2 afterwards) and ReLU,
/// followed by a global average pool over the last stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Backbone { config })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn stage_prefix(stage: usize) -> String {
        format!("backbone.stage{stage}")
    }

    pub fn init_params<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        let mut prev = self.config.in_channels;
        for (i, &w) in self.config.widths.iter().enumerate() {
            let trainable = self.config.stage_trainable(i);
            init_conv(params, rng, &Self::stage_prefix(i), prev, w, 3, trainable)?;
            prev = w;
        }
        Ok(())
    }

    /// Re-apply the trainable flags from the config, e.g. after loading weights.
    pub fn apply_flags<T: Scalar>(&self, params: &mut ParamSet<T>) {
        for i in 0..self.config.stages() {
            params.set_trainable(&format!("{}.", Self::stage_prefix(i)), self.config.stage_trainable(i));
        }
    }

    /// Runs `stages` without the final pool.
    pub fn forward_stages<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        x: Var,
        stages: Range<usize>,
    ) -> Result<Var> {
        let mut h = x;
        for i in stages {
            let p = Self::stage_prefix(i);
            let w = tape.param(params, &format!("{p}.w"))?;
            let b = tape.param(params, &format!("{p}.b"))?;
            let stride = if i == 0 { 1 } else { 2 };
            h = tape.conv2d(h, w, b, stride, Padding::Same)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// `[N, 3, H, W] -> [N, feature_dim]`
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let h = self.forward_stages(tape, params, x, 0..self.config.stages())?;
        Ok(tape.global_avg_pool(h)?)
    }
}
