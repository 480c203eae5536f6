use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Birads, CaseRecord, Density, Finding, Laterality, View};
use crate::imaging::{quantize, BitDepth, PreprocessedImage, RawImage};

/// Synthetic screening views. Suspicious breasts carry a faint random-sign
/// speckle patch in both views; every image has a smooth, high-contrast
/// random background and white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub image_size: usize,
    /// Probability that a breast is suspicious.
    pub positive_rate: f64,
    /// Peak-to-mean amplitude of the lesion texture.
    pub texture_amplitude: f64,
    /// Side of the square lesion patch in pixels.
    pub lesion_size: usize,
    /// Amplitude of the smooth background blobs; doubled for dense breasts.
    pub background_amplitude: f64,
    pub noise_sigma: f64,
    /// Fraction of views recorded as BI-RADS 0.
    pub excluded_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 500,
            image_size: 16,
            positive_rate: 0.4,
            texture_amplitude: 0.08,
            lesion_size: 6,
            background_amplitude: 0.15,
            noise_sigma: 0.01,
            excluded_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCase {
    pub record: CaseRecord,
    pub image: PreprocessedImage<f64>,
}

impl SynthCase {
    /// 16-bit raster with a black frame so Otsu cropping recovers the content.
    /// Content intensities are mapped to `[0.25, 1]`.
    pub fn to_framed_raw(&self, border: usize) -> RawImage {
        let (h, w) = (self.image.height, self.image.width);
        let (fh, fw) = (h + 2 * border, w + 2 * border);
        let mut px = vec![0u16; fh * fw];
        for y in 0..h {
            for x in 0..w {
                let v = 0.25 + 0.75 * self.image.values[y * w + x];
                px[(y + border) * fw + x + border] = quantize(v, BitDepth::Sixteen);
            }
        }
        RawImage::new(fw, fh, BitDepth::Sixteen, px).expect("valid frame")
    }
}

fn render(cfg: &SynthConfig, rng: &mut impl Rng, dense: bool, lesion: bool) -> Vec<f64> {
    let n = cfg.image_size;
    let s = n as f64;
    let amp = cfg.background_amplitude * if dense { 2.0 } else { 1.0 };
    let mut v = vec![0.5 + rng.random_range(-0.1..0.1); n * n];
    let (gx, gy) = (rng.random_range(-amp..amp) / s, rng.random_range(-amp..amp) / s);
    for _ in 0..3 {
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let sigma = rng.random_range(0.15 * s..0.4 * s);
        let a = rng.random_range(-amp..amp);
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v[y * n + x] += a * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for y in 0..n {
        for x in 0..n {
            v[y * n + x] += gx * (x as f64 - s / 2.0) + gy * (y as f64 - s / 2.0);
        }
    }
    if lesion {
        let l = cfg.lesion_size.min(n);
        let (ox, oy) = (rng.random_range(0..=n - l), rng.random_range(0..=n - l));
        for y in oy..oy + l {
            for x in ox..ox + l {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                v[y * n + x] += sign * cfg.texture_amplitude;
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-12)).expect("positive sigma");
    v.iter_mut().for_each(|p| *p = (*p + noise.sample(rng)).clamp(0.0, 1.0));
    v
}

/// Four views (L/R x CC/MLO) per patient, one study each.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_patients * 4);
    let width = cfg.n_patients.max(1).to_string().len();
    for p in 0..cfg.n_patients {
        let patient_id = format!("P{p:0width$}");
        let density = [Density::A, Density::B, Density::B, Density::C, Density::C, Density::D][rng.random_range(0..6)];
        let dense = matches!(density, Density::C | Density::D);
        for lat in [Laterality::L, Laterality::R] {
            let positive = rng.random_bool(cfg.positive_rate);
            let (birads, findings) = if positive {
                let b = [(4, Some('A')), (4, Some('B')), (4, Some('C')), (5, None)][rng.random_range(0..4)];
                (b, vec![Finding::LESIONS[rng.random_range(0..4)]])
            } else {
                ([(1, None), (2, None), (3, None)][rng.random_range(0..3)], vec![Finding::None])
            };
            for view in [View::CC, View::MLO] {
                let values = render(cfg, &mut rng, dense, positive);
                let excluded = rng.random_bool(cfg.excluded_rate);
                let birads = if excluded { Birads::new(0, None) } else { Birads::new(birads.0, birads.1) }.expect("valid");
                let record = CaseRecord {
                    patient_id: patient_id.clone(),
                    study_id: format!("{patient_id}-S1"),
                    laterality: lat,
                    view,
                    birads,
                    density,
                    findings: findings.clone(),
                    image_path: format!("{patient_id}_{lat:?}_{view:?}.png"),
                    extra: Default::default(),
                };
                let image = PreprocessedImage::new(cfg.image_size, cfg.image_size, values).expect("in range");
                out.push(SynthCase { record, image });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::preprocess;

    #[test]
    fn deterministic_and_labelled_by_breast() {
        let cfg = SynthConfig { n_patients: 20, ..Default::default() };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.len(), 80);
        assert!(a.iter().zip(&b).all(|(x, y)| x.image == y.image && x.record == y.record));
        for pair in a.chunks(2) {
            assert_eq!(pair[0].record.label(), pair[1].record.label());
        }
    }

    #[test]
    fn framed_raster_preprocesses_back_to_content_size() {
        let cfg = SynthConfig { n_patients: 1, ..Default::default() };
        let case = &generate(&cfg)[0];
        let raw = case.to_framed_raw(4);
        let img = preprocess::<f64>(&raw, 16, 16).unwrap();
        assert_eq!((img.source_crop.w, img.source_crop.h), (16, 16));
    }
}
