use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_dense, ModelError, Result};
use crate::diffcore::{ParamSet, Tape, Var};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { hidden: 64 }
    }
}

/// dense -> ReLU -> dense to a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    config: HeadConfig,
    in_features: usize,
}

impl Head {
    pub fn new(config: HeadConfig, in_features: usize) -> Result<Self> {
        if config.hidden == 0 || in_features == 0 {
            return Err(ModelError::Config("head sizes must be positive".into()));
        }
        Ok(Head { config, in_features })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn init_params<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        init_dense(params, rng, "head.fc1", self.in_features, self.config.hidden, 2f64.sqrt(), true)?;
        init_dense(params, rng, "head.fc2", self.config.hidden, 1, 1.0, true)
    }

    /// `[N, in_features] -> [N, 1]` logits.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w1 = tape.param(params, "head.fc1.w")?;
        let b1 = tape.param(params, "head.fc1.b")?;
        let h = tape.dense(x, w1, b1)?;
        let h = tape.relu(h);
        let w2 = tape.param(params, "head.fc2.w")?;
        let b2 = tape.param(params, "head.fc2.b")?;
        Ok(tape.dense(h, w2, b2)?)
    }
}
