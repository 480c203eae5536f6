use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::synth::{generate, SynthConfig};
use super::{train, Result, TrainConfig, TrainingRegime, TrainingSet};
use crate::diffcore::{grad_check, DiffError, GradCheckConfig, GradCheckReport, Gradients, Objective, OptimizerConfig, ParamSet, Tape, Tensor};
use crate::models::{FrontEnd, ModelError, Network, NetworkConfig, TdceConfig};

/// Mean binary cross-entropy of the whole network (front end, backbone,
/// head) on a fixed batch.
pub struct NetworkLoss<'a> {
    pub network: &'a Network,
    pub images: Tensor<f64>,
    pub targets: Vec<f64>,
}

impl NetworkLoss<'_> {
    fn run(&self, params: &ParamSet<f64>, grad: bool) -> std::result::Result<(f64, Option<Gradients<f64>>, u64), DiffError> {
        let mut tape = Tape::new();
        let x = tape.input(self.images.clone());
        let out = self.network.forward(&mut tape, params, x).map_err(|e| match e {
            ModelError::Diff(d) => d,
            other => DiffError::ShapeMismatch { op: "network", detail: other.to_string() },
        })?;
        let loss = tape.bce_with_logits(out.logits, &self.targets)?;
        let value = tape.value(loss).data()[0];
        let signature = tape.activation_signature();
        let g = if grad { Some(tape.backward(loss, Tensor::scalar(1.0))?) } else { None };
        Ok((value, g, signature))
    }
}

impl Objective for NetworkLoss<'_> {
    fn loss(&self, params: &ParamSet<f64>) -> std::result::Result<f64, DiffError> {
        Ok(self.run(params, false)?.0)
    }

    fn loss_and_grad(&self, params: &ParamSet<f64>) -> std::result::Result<(f64, Gradients<f64>), DiffError> {
        let (l, g, _) = self.run(params, true)?;
        Ok((l, g.expect("requested")))
    }

    fn loss_and_signature(&self, params: &ParamSet<f64>) -> std::result::Result<(f64, Option<u64>), DiffError> {
        let (l, _, s) = self.run(params, false)?;
        Ok((l, Some(s)))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineGradCheck {
    pub size: usize,
    pub batch: usize,
    pub seed: u64,
    /// Coordinates checked per parameter tensor; `None` checks all.
    pub entries_per_param: Option<usize>,
    pub tolerance: f64,
}

impl Default for PipelineGradCheck {
    fn default() -> Self {
        PipelineGradCheck { size: 32, batch: 2, seed: 0, entries_per_param: Some(16), tolerance: 1e-4 }
    }
}

/// Analytic against central-difference gradients for every parameter tensor
/// of a TDCE network (frozen backbone included) on random inputs.
pub fn pipeline_grad_check(cfg: &PipelineGradCheck) -> Result<GradCheckReport> {
    let net_cfg = NetworkConfig {
        front_end: FrontEnd::Tdce(TdceConfig { depth: 2, base_channels: 4, ..Default::default() }),
        ..NetworkConfig::tdce(cfg.size)
    };
    let network = Network::new(net_cfg)?;
    let mut params = network.init_params::<f64>(cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Zero-initialised biases put every dead-input unit exactly on its ReLU
    // kink, where the two sides of a central difference disagree. Check at a
    // generic point instead.
    let biases: Vec<String> = params.names().filter(|n| n.ends_with(".b")).map(String::from).collect();
    for name in biases {
        params.tensor_mut(&name)?.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let n = cfg.batch;
    let images = Tensor::from_fn(&[n, 1, cfg.size, cfg.size], |_| rng.random_range(0.0..1.0));
    let targets = (0..n).map(|i| (i % 2) as f64).collect();
    let objective = NetworkLoss { network: &network, images, targets };
    let check = GradCheckConfig {
        step: 1e-5,
        tolerance: cfg.tolerance,
        max_entries_per_param: cfg.entries_per_param,
        abs_floor: 1e-6,
        seed: cfg.seed,
        refinements: 4,
    };
    Ok(grad_check(&objective, &params, &check)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct FreezingReport {
    pub epochs: usize,
    pub frozen_before: String,
    pub frozen_after: String,
    pub tdce_before: String,
    pub tdce_after: String,
    pub head_before: String,
    pub head_after: String,
    pub passed: bool,
}

/// Trains the TDCE regime on a small synthetic set and compares SHA-256
/// digests of the frozen, encoder and head parameters before and after.
pub fn freezing_check(epochs: usize, seed: u64) -> Result<FreezingReport> {
    let synth = SynthConfig { n_patients: 24, image_size: 16, seed, ..Default::default() };
    let (images, labels): (Vec<_>, Vec<_>) = generate(&synth)
        .into_iter()
        .filter_map(|c| c.record.label().as_bool().map(|y| (c.image, y)))
        .unzip();
    let set = TrainingSet::<f64>::new(&images, labels)?;
    let base = NetworkConfig {
        front_end: FrontEnd::Tdce(TdceConfig { depth: 2, base_channels: 4, ..Default::default() }),
        ..NetworkConfig::tdce(16)
    };
    let cfg = TrainConfig { optimizer: OptimizerConfig::adam(3e-3), batch_size: 16, epochs, seed };
    let out = train(TrainingRegime::Tdce, &base, &cfg, &set, None, &mut |_| {})?;
    let frozen = |p: &ParamSet<f64>| p.digest_where(|_, q| !q.trainable);
    let report = FreezingReport {
        epochs,
        frozen_before: frozen(&out.initial),
        frozen_after: frozen(&out.params),
        tdce_before: out.initial.digest_prefix("tdce."),
        tdce_after: out.params.digest_prefix("tdce."),
        head_before: out.initial.digest_prefix("head."),
        head_after: out.params.digest_prefix("head."),
        passed: false,
    };
    let passed = report.frozen_before == report.frozen_after
        && report.tdce_before != report.tdce_after
        && report.head_before != report.head_after
        && out.initial.iter().any(|(_, p)| !p.trainable);
    Ok(FreezingReport { passed, ..report })
}
