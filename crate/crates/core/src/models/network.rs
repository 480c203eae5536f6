use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig, Head, HeadConfig, ModelError, Result, Tdce, TdceConfig};
use crate::diffcore::{ParamSet, Tape, Tensor, Var};
use crate::imaging::{PreprocessedImage, RgbImage};
use crate::Scalar;

/// How a single-channel image becomes the backbone's three channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrontEnd {
    Tdce(TdceConfig),
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub front_end: FrontEnd,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub input_height: usize,
    pub input_width: usize,
}

impl NetworkConfig {
    pub fn tdce(input_size: usize) -> Self {
        NetworkConfig {
            front_end: FrontEnd::Tdce(TdceConfig::default()),
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            input_height: input_size,
            input_width: input_size,
        }
    }

    pub fn gray(input_size: usize) -> Self {
        NetworkConfig { front_end: FrontEnd::Replicate, ..Self::tdce(input_size) }
    }
}

pub struct NetworkOutputs {
    /// `[N, 3, H, W]` backbone input.
    pub rgb: Var,
    /// `[N, F]` pooled backbone features.
    pub features: Var,
    /// `[N, 1]` head logits.
    pub logits: Var,
}

/// Front end, backbone and head. Holds only architecture; parameters live in
/// a `ParamSet` under the `tdce.`, `backbone.` and `head.` prefixes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    tdce: Option<Tdce>,
    backbone: Backbone,
    head: Head,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        if config.input_height == 0 || config.input_width == 0 {
            return Err(ModelError::Config("input size must be positive".into()));
        }
        let tdce = match &config.front_end {
            FrontEnd::Tdce(c) => {
                let t = Tdce::new(c.clone())?;
                let m = c.required_multiple();
                if !config.input_height.is_multiple_of(m) || !config.input_width.is_multiple_of(m) {
                    return Err(ModelError::Indivisible {
                        height: config.input_height,
                        width: config.input_width,
                        multiple: m,
                    });
                }
                Some(t)
            }
            FrontEnd::Replicate => None,
        };
        let backbone = Backbone::new(config.backbone.clone())?;
        let head = Head::new(config.head.clone(), config.backbone.feature_dim())?;
        Ok(Network { config, tdce, backbone, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tdce(&self) -> Option<&Tdce> {
        self.tdce.as_ref()
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Leading backbone stages whose outputs cannot change during training.
    /// Zero whenever the front end has parameters.
    pub fn frozen_prefix(&self) -> usize {
        if self.tdce.is_some() {
            return 0;
        }
        let b = &self.config.backbone;
        (0..b.stages()).take_while(|&i| !b.stage_trainable(i)).count()
    }

    /// Each component draws from its own ChaCha stream, so two networks with
    /// the same seed share backbone and head weights regardless of front end.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut params = ParamSet::new();
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        self.backbone.init_params(&mut params, &mut stream(1))?;
        self.head.init_params(&mut params, &mut stream(2))?;
        if let Some(t) = &self.tdce {
            t.init_params(&mut params, &mut stream(3), true)?;
        }
        Ok(params)
    }

    fn check_input(&self, shape: &[usize], channels: usize) -> Result<()> {
        let want = [channels, self.config.input_height, self.config.input_width];
        if shape.len() != 4 || shape[1..] != want {
            return Err(ModelError::Shape(format!("expected [N, {}, {}, {}], got {shape:?}", want[0], want[1], want[2])));
        }
        Ok(())
    }

    /// `[N, 1, H, W] -> [N, 3, H, W]`
    pub fn front_end<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape(), 1)?;
        match &self.tdce {
            Some(t) => t.forward(tape, params, x),
            None => {
                let a = tape.concat(x, x)?;
                Ok(tape.concat(a, x)?)
            }
        }
    }

    /// `[N, 3, H, W] -> ([N, F], [N, 1])`
    pub fn classifier<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, rgb: Var) -> Result<(Var, Var)> {
        self.check_input(tape.value(rgb).shape(), 3)?;
        let features = self.backbone.forward(tape, params, rgb)?;
        let logits = self.head.forward(tape, params, features)?;
        Ok((features, logits))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<NetworkOutputs> {
        let rgb = self.front_end(tape, params, x)?;
        let (features, logits) = self.classifier(tape, params, rgb)?;
        Ok(NetworkOutputs { rgb, features, logits })
    }

    /// Head logits from precomputed backbone features.
    pub fn head_forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, features: Var) -> Result<Var> {
        self.head.forward(tape, params, features)
    }

    /// Pooled backbone features for a batch, without gradient bookkeeping
    /// beyond one forward pass.
    pub fn features<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(batch.clone());
        let out = self.forward(&mut tape, params, x)?;
        Ok(tape.value(out.features).clone())
    }

    /// Suspicion probabilities for a `[N, 1, H, W]` batch.
    pub fn predict_batch<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let x = tape.input(batch.clone());
        let out = self.forward(&mut tape, params, x)?;
        let p = tape.sigmoid(out.logits);
        Ok(tape.value(p).data().to_vec())
    }

    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, img: &PreprocessedImage<T>) -> Result<T> {
        Ok(self.predict_batch(params, &image_batch(&[img])?)?[0])
    }

    /// Backbone and head on an already three-channel image.
    pub fn classify<T: Scalar>(&self, params: &ParamSet<T>, rgb: &RgbImage<T>) -> Result<T> {
        let t = Tensor::new(vec![1, 3, rgb.height(), rgb.width()], rgb.planar().to_vec())?;
        let mut tape = Tape::new();
        let x = tape.input(t);
        let (_, logits) = self.classifier(&mut tape, params, x)?;
        let p = tape.sigmoid(logits);
        Ok(tape.value(p).data()[0])
    }

    /// The image the backbone sees for this input.
    pub fn encode<T: Scalar>(&self, params: &ParamSet<T>, img: &PreprocessedImage<T>) -> Result<RgbImage<T>> {
        match &self.tdce {
            Some(t) => tdce_encode_with(t, params, img),
            None => Ok(replicate_channels(img)),
        }
    }
}

/// Stacks single-channel images into `[N, 1, H, W]`.
pub fn image_batch<T: Scalar>(imgs: &[&PreprocessedImage<T>]) -> Result<Tensor<T>> {
    let first = imgs.first().ok_or_else(|| ModelError::Shape("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for img in imgs {
        if (img.height, img.width) != (h, w) {
            return Err(ModelError::Shape(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height, img.width
            )));
        }
        data.extend_from_slice(&img.values);
    }
    Ok(Tensor::new(vec![imgs.len(), 1, h, w], data)?)
}

pub(crate) fn tdce_encode_with<T: Scalar>(
    tdce: &Tdce,
    params: &ParamSet<T>,
    img: &PreprocessedImage<T>,
) -> Result<RgbImage<T>> {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(vec![1, 1, img.height, img.width], img.values.clone())?);
    let y = tdce.forward(&mut tape, params, x)?;
    let data = tape.value(y).data().to_vec();
    Ok(RgbImage::from_planar(img.height, img.width, data)?)
}

/// Runs the learned encoder on one image.
pub fn tdce_encode<T: Scalar>(
    img: &PreprocessedImage<T>,
    config: &TdceConfig,
    params: &ParamSet<T>,
) -> Result<RgbImage<T>> {
    tdce_encode_with(&Tdce::new(config.clone())?, params, img)
}

pub fn replicate_channels<T: Scalar>(img: &PreprocessedImage<T>) -> RgbImage<T> {
    let mut planar = Vec::with_capacity(3 * img.values.len());
    for _ in 0..3 {
        planar.extend_from_slice(&img.values);
    }
    RgbImage::from_planar(img.height, img.width, planar).expect("sized to image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Gradients;
    use rand::{Rng, SeedableRng};

    fn small(front_end: FrontEnd) -> Network {
        Network::new(NetworkConfig {
            front_end,
            backbone: BackboneConfig { widths: vec![4, 8], ..Default::default() },
            head: HeadConfig { hidden: 6 },
            input_height: 8,
            input_width: 8,
        })
        .unwrap()
    }

    fn small_tdce() -> Network {
        small(FrontEnd::Tdce(TdceConfig { depth: 2, base_channels: 3, ..Default::default() }))
    }

    fn random_image(seed: u64, h: usize, w: usize) -> PreprocessedImage<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PreprocessedImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn replicate_copies_every_channel() {
        let img = PreprocessedImage::new(1, 2, vec![0.3, 0.9]).unwrap();
        let rgb = replicate_channels(&img);
        assert_eq!(rgb.pixel(0, 0), [0.3, 0.3, 0.3]);
        let img = random_image(3, 5, 7);
        let rgb = replicate_channels(&img);
        assert_eq!(rgb.channel(0), rgb.channel(1));
        assert_eq!(rgb.channel(1), rgb.channel(2));
    }

    #[test]
    fn zeroed_head_gives_one_half() {
        let net = small_tdce();
        let mut params = net.init_params::<f64>(1).unwrap();
        for name in ["head.fc2.w", "head.fc2.b"] {
            params.tensor_mut(name).unwrap().data_mut().fill(0.0);
        }
        for seed in 0..3 {
            assert_eq!(net.predict(&params, &random_image(seed, 8, 8)).unwrap(), 0.5);
        }
    }

    #[test]
    fn probability_increases_with_head_bias() {
        let net = small(FrontEnd::Replicate);
        let mut params = net.init_params::<f64>(2).unwrap();
        let rgb = replicate_channels(&random_image(9, 8, 8));
        let mut last = net.classify(&params, &rgb).unwrap();
        for _ in 0..5 {
            params.tensor_mut("head.fc2.b").unwrap().data_mut()[0] += 0.25;
            let p = net.classify(&params, &rgb).unwrap();
            assert!(p > last && p > 0.0 && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn permuting_identical_channels_keeps_score() {
        let net = small(FrontEnd::Replicate);
        let params = net.init_params::<f64>(4).unwrap();
        let img = random_image(5, 8, 8);
        let rgb = replicate_channels(&img);
        let n = 64;
        let p = rgb.planar();
        let permuted = [&p[2 * n..], &p[..n], &p[n..2 * n]].concat();
        let swapped = RgbImage::from_planar(8, 8, permuted).unwrap();
        assert_eq!(net.classify(&params, &rgb).unwrap(), net.classify(&params, &swapped).unwrap());
        assert_eq!(net.predict(&params, &img).unwrap(), net.classify(&params, &rgb).unwrap());
    }

    #[test]
    fn classify_rejects_wrong_size() {
        let net = small(FrontEnd::Replicate);
        let params = net.init_params::<f64>(0).unwrap();
        let rgb = replicate_channels(&random_image(0, 4, 8));
        assert!(matches!(net.classify(&params, &rgb), Err(ModelError::Shape(_))));
    }

    #[test]
    fn encoding_is_deterministic_and_bounded() {
        let net = small_tdce();
        let a = net.init_params::<f64>(11).unwrap();
        let b = net.init_params::<f64>(11).unwrap();
        let img = random_image(1, 8, 8);
        let (x, y) = (net.encode(&a, &img).unwrap(), net.encode(&b, &img).unwrap());
        assert_eq!(x.planar(), y.planar());
        assert!(x.planar().iter().all(|v| (0.0..=1.0).contains(v)));
        let cfg = TdceConfig { depth: 2, base_channels: 3, ..Default::default() };
        assert_eq!(tdce_encode(&img, &cfg, &a).unwrap().planar(), x.planar());
        assert!(matches!(
            tdce_encode(&random_image(1, 6, 8), &cfg, &a),
            Err(ModelError::Indivisible { multiple: 4, .. })
        ));
    }

    #[test]
    fn shared_seed_shares_backbone_and_head() {
        let t = small_tdce().init_params::<f64>(8).unwrap();
        let g = small(FrontEnd::Replicate).init_params::<f64>(8).unwrap();
        assert_eq!(t.digest_prefix("backbone."), g.digest_prefix("backbone."));
        assert_eq!(t.digest_prefix("head."), g.digest_prefix("head."));
        assert!(t.get("backbone.stage0.w").is_some_and(|p| !p.trainable));
        assert!(t.get("tdce.enc0.conv1.w").is_some_and(|p| p.trainable));
    }

    fn loss_grads(net: &Network, params: &ParamSet<f64>, batch: &Tensor<f64>, y: &[f64]) -> (f64, Gradients<f64>) {
        let mut tape = Tape::new();
        let x = tape.input(batch.clone());
        let out = net.forward(&mut tape, params, x).unwrap();
        let loss = tape.bce_with_logits(out.logits, y).unwrap();
        let l = tape.value(loss).data()[0];
        (l, tape.backward(loss, Tensor::scalar(1.0)).unwrap())
    }

    #[test]
    fn gradient_reaches_first_tdce_layer() {
        let net = small_tdce();
        let params = net.init_params::<f64>(6).unwrap();
        let imgs: Vec<_> = (0..3).map(|s| random_image(s, 8, 8)).collect();
        let batch = image_batch(&imgs.iter().collect::<Vec<_>>()).unwrap();
        let y = [1.0, 0.0, 1.0];
        let (_, grads) = loss_grads(&net, &params, &batch, &y);
        let g = grads.param("tdce.enc0.conv1.w").unwrap();
        let (idx, &analytic) = g
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert!(analytic.abs() > 0.0);
        let h = 1e-5;
        let mut p = params.clone();
        p.tensor_mut("tdce.enc0.conv1.w").unwrap().data_mut()[idx] += h;
        let (lp, _) = loss_grads(&net, &p, &batch, &y);
        p.tensor_mut("tdce.enc0.conv1.w").unwrap().data_mut()[idx] -= 2.0 * h;
        let (lm, _) = loss_grads(&net, &p, &batch, &y);
        let numeric = (lp - lm) / (2.0 * h);
        assert!((numeric - analytic).abs() / analytic.abs() < 1e-5, "{numeric} vs {analytic}");
    }

    #[test]
    fn config_serde_round_trip() {
        let c = NetworkConfig::tdce(256);
        let back: NetworkConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
        assert!(Network::new(NetworkConfig { input_height: 250, ..c }).is_err());
    }
}
