use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::imaging::{PreprocessedImage, RgbImage};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub intensity: f64,
    pub rgb: [f64; 3],
}

/// Piecewise-linear pseudo-color lookup. Anchor intensities increase strictly
/// from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Anchor>", into = "Vec<Anchor>")]
pub struct ColormapTable {
    anchors: Vec<Anchor>,
}

impl TryFrom<Vec<Anchor>> for ColormapTable {
    type Error = ModelError;

    fn try_from(anchors: Vec<Anchor>) -> Result<Self> {
        ColormapTable::new(anchors)
    }
}

impl From<ColormapTable> for Vec<Anchor> {
    fn from(t: ColormapTable) -> Self {
        t.anchors
    }
}

impl ColormapTable {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(ModelError::Colormap("need at least two anchors".into()));
        }
        if anchors[0].intensity != 0.0 || anchors[anchors.len() - 1].intensity != 1.0 {
            return Err(ModelError::Colormap("first anchor must be at 0 and last at 1".into()));
        }
        for pair in anchors.windows(2) {
            if !(pair[1].intensity > pair[0].intensity) {
                return Err(ModelError::Colormap(format!(
                    "intensities must increase strictly ({} then {})",
                    pair[0].intensity, pair[1].intensity
                )));
            }
        }
        for a in &anchors {
            if a.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(ModelError::Colormap(format!("color at {} outside [0, 1]", a.intensity)));
            }
        }
        Ok(ColormapTable { anchors })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Black to white on all channels.
    pub fn grayscale() -> Self {
        ColormapTable::new(vec![
            Anchor { intensity: 0.0, rgb: [0.0; 3] },
            Anchor { intensity: 1.0, rgb: [1.0; 3] },
        ])
        .expect("valid table")
    }

    /// Black, dark red, red, orange, yellow, pale yellow, white; anchors at k/7.
    /// Every channel is non-decreasing.
    pub fn heat() -> Self {
        const RGB: [[f64; 3]; 8] = [
            [0.0, 0.0, 0.0],
            [0.35, 0.0, 0.0],
            [0.7, 0.05, 0.0],
            [0.95, 0.25, 0.0],
            [1.0, 0.5, 0.0],
            [1.0, 0.75, 0.1],
            [1.0, 0.92, 0.5],
            [1.0, 1.0, 1.0],
        ];
        let anchors = RGB
            .iter()
            .enumerate()
            .map(|(k, &rgb)| Anchor { intensity: if k == 7 { 1.0 } else { k as f64 / 7.0 }, rgb })
            .collect();
        ColormapTable::new(anchors).expect("valid table")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "gray" | "grayscale" => Some(Self::grayscale()),
            "heat" => Some(Self::heat()),
            _ => None,
        }
    }

    /// Values outside `[0, 1]` clamp to the end anchors.
    pub fn lookup(&self, v: f64) -> [f64; 3] {
        let a = &self.anchors;
        if !(v > 0.0) {
            return a[0].rgb;
        }
        if v >= 1.0 {
            return a[a.len() - 1].rgb;
        }
        let hi = a.partition_point(|x| x.intensity <= v);
        let (lo, hi) = (&a[hi - 1], &a[hi]);
        let t = (v - lo.intensity) / (hi.intensity - lo.intensity);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = lo.rgb[c] + t * (hi.rgb[c] - lo.rgb[c]);
        }
        out
    }
}

pub fn apply_colormap<T: Scalar>(img: &PreprocessedImage<T>, table: &ColormapTable) -> RgbImage<T> {
    let n = img.height * img.width;
    let mut planar = vec![T::zero(); 3 * n];
    for (i, &v) in img.values.iter().enumerate() {
        let rgb = table.lookup(v.f64());
        for c in 0..3 {
            planar[c * n + i] = T::lit(rgb[c]);
        }
    }
    RgbImage::from_planar(img.height, img.width, planar).expect("sized to image")
}
