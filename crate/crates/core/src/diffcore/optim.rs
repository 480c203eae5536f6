use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DiffError, Gradients, ParamSet, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps(), weight_decay: 0.0 }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr, weight_decay: 0.0 }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

/// First-order optimizer. Only parameters flagged trainable are touched.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, first: BTreeMap::new(), second: BTreeMap::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.trainable {
                continue;
            }
            match grads.param(name) {
                None => return Err(DiffError::MissingGradient(name.to_string())),
                Some(g) if g.shape() != p.tensor.shape() => {
                    return Err(DiffError::ShapeMismatch {
                        op: "optimizer_step",
                        detail: format!("`{name}`: gradient {:?} vs parameter {:?}", g.shape(), p.tensor.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.param(name).expect("checked above").data();
            let w = p.tensor.data_mut();
            match self.config {
                OptimizerConfig::Sgd { lr, weight_decay } => {
                    let (lr, wd) = (T::lit(lr), T::lit(weight_decay));
                    for (wi, &gi) in w.iter_mut().zip(g) {
                        *wi -= lr * (gi + wd * *wi);
                    }
                }
                OptimizerConfig::Adam { lr, beta1, beta2, eps, weight_decay } => {
                    let m = self.first.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
                    let v = self.second.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
                    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                    let c1 = T::one() - T::lit(beta1.powi(t));
                    let c2 = T::one() - T::lit(beta2.powi(t));
                    let (lr, eps, wd) = (T::lit(lr), T::lit(eps), T::lit(weight_decay));
                    for i in 0..w.len() {
                        let gi = g[i] + wd * w[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * gi;
                        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tape, Tensor};

    fn grads_for(params: &ParamSet<f64>, values: &[(&str, f64)]) -> Gradients<f64> {
        // Build gradients through a tape: loss = sum_i g_i * p_i.
        let mut tape = Tape::new();
        let mut total = None;
        for &(name, g) in values {
            let p = tape.param(params, name).unwrap();
            let s = tape.scale(p, g);
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s).unwrap(),
            });
        }
        let out = total.unwrap();
        tape.backward(out, Tensor::scalar(1.0)).unwrap()
    }

    #[test]
    fn sgd_update_rule() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(1.0), true).unwrap();
        let g = grads_for(&params, &[("w", 0.5)]);
        Optimizer::new(OptimizerConfig::sgd(0.1)).step(&mut params, &g).unwrap();
        assert_eq!(params.tensor("w").unwrap().data()[0], 0.95);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(1.0), false).unwrap();
        params.insert("v", Tensor::scalar(1.0), true).unwrap();
        let g = grads_for(&params, &[("w", 3.0), ("v", 1.0)]);
        let before = params.tensor("w").unwrap().data()[0].to_bits();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.5));
        for _ in 0..5 {
            opt.step(&mut params, &g).unwrap();
        }
        assert_eq!(params.tensor("w").unwrap().data()[0].to_bits(), before);
        assert_ne!(params.tensor("v").unwrap().data()[0], 1.0);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(2.0), true).unwrap();
        let g = grads_for(&params, &[("w", 1.0)]);
        let lr = 0.01;
        let eps = 1e-8;
        Optimizer::new(OptimizerConfig::adam(lr)).step(&mut params, &g).unwrap();
        // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1.
        let m_hat = (0.1f64) / (1.0 - 0.9);
        let v_hat = (0.001f64) / (1.0 - 0.999);
        let expected = 2.0 - lr * m_hat / (v_hat.sqrt() + eps);
        let got = params.tensor("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!(((2.0 - got) - lr / (1.0 + eps)).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::scalar(1.0), true).unwrap();
        params.insert("b", Tensor::scalar(1.0), true).unwrap();
        let mut only_a = ParamSet::new();
        only_a.insert("a", Tensor::scalar(1.0), true).unwrap();
        let g = grads_for(&only_a, &[("a", 1.0)]);
        let err = Optimizer::new(OptimizerConfig::sgd(0.1)).step(&mut params, &g).unwrap_err();
        assert_eq!(err, DiffError::MissingGradient("b".into()));
        assert_eq!(params.tensor("a").unwrap().data()[0], 1.0);
    }
}
