//! Analytic classifiers with known behavior, used as oracles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Activation, Classifier, ClassifierInfo, Normalization, Provenance};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::render::Image;

fn info(name: &str, labels: Vec<EmotionLabel>, normalization: Normalization) -> ClassifierInfo {
    ClassifierInfo { name: name.to_string(), labels, input_size: None, normalization }
}

/// Returns the same activation for every image.
pub struct ConstantClassifier {
    info: ClassifierInfo,
    activation: Activation,
}

impl ConstantClassifier {
    pub fn new(values: BTreeMap<EmotionLabel, f64>, normalization: Normalization) -> Result<Self> {
        let activation = Activation::new(values, normalization)?;
        let labels = activation.values.keys().copied().collect();
        Ok(Self { info: info("constant", labels, normalization), activation })
    }

    /// Every base emotion reports `value`.
    pub fn uniform(value: f64) -> Self {
        let values = EmotionLabel::BASE.iter().map(|&l| (l, value)).collect();
        Self::new(values, Normalization::Logit).expect("finite constant")
    }
}

impl Classifier for ConstantClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn classify(&self, _image: &Image, _provenance: &Provenance) -> Result<Activation> {
        Ok(self.activation.clone())
    }
}

/// Bilinear surface `h(s, t) = c + a_s·s + a_t·t + a_st·s·t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Surface {
    pub c: f64,
    pub a_s: f64,
    pub a_t: f64,
    pub a_st: f64,
}

impl Surface {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.c + self.a_s * s + self.a_t * t + self.a_st * s * t
    }

    /// `t·(0.5 + 0.5·s)`: activation grows with onset and symmetry.
    pub fn onset_times_symmetry() -> Self {
        Self { c: 0.0, a_s: 0.0, a_t: 0.5, a_st: 0.5 }
    }
}

/// Reports `h(s, t)` read from the request provenance, ignoring pixels.
pub struct SurfaceClassifier {
    info: ClassifierInfo,
    surfaces: BTreeMap<EmotionLabel, Surface>,
}

impl SurfaceClassifier {
    pub fn new(surfaces: BTreeMap<EmotionLabel, Surface>) -> Self {
        let labels = surfaces.keys().copied().collect();
        Self { info: info("surface", labels, Normalization::Logit), surfaces }
    }

    /// The same surface for all six base emotions.
    pub fn uniform(surface: Surface) -> Self {
        Self::new(EmotionLabel::BASE.iter().map(|&l| (l, surface)).collect())
    }
}

impl Classifier for SurfaceClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn classify(&self, _image: &Image, provenance: &Provenance) -> Result<Activation> {
        let (Some(s), Some(t)) = (provenance.s, provenance.t) else {
            return Err(Error::InvalidInput("surface fixture needs (s, t) provenance".into()));
        };
        let values = self.surfaces.iter().map(|(&l, h)| (l, h.eval(s, t))).collect();
        Activation::new(values, Normalization::Logit)
    }
}

/// Mean channel intensity in [0, 1], reported for every base emotion.
pub struct IntensityClassifier {
    info: ClassifierInfo,
}

impl Default for IntensityClassifier {
    fn default() -> Self {
        Self { info: info("intensity", EmotionLabel::BASE.to_vec(), Normalization::Logit) }
    }
}

impl Classifier for IntensityClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn classify(&self, image: &Image, _provenance: &Provenance) -> Result<Activation> {
        let bytes = image.as_bytes();
        let mean = bytes.iter().map(|&b| f64::from(b)).sum::<f64>() / (bytes.len() as f64 * 255.0);
        Activation::new(EmotionLabel::BASE.iter().map(|&l| (l, mean)).collect(), Normalization::Logit)
    }
}

/// Weights of one emotion over the per-half image features
/// `[mouth_lift, mouth_drop, mouth_width, brow_lift]`.
pub type FeatureWeights = [f64; 4];

/// Parameters of [`GeometricClassifier`].
///
/// Row ranges are fractions of the image height (0 = top). The defaults
/// match the builtin head framed by the default render settings: the mouth
/// band covers the lips over the full expression range, the brow band covers
/// brows and eyes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometricConfig {
    /// Gain on the expression term.
    pub a: f64,
    /// Penalty on mirror asymmetry. `b = 0` makes the classifier blind to
    /// left/right differences.
    pub b: f64,
    pub offset: f64,
    /// Pixels with luma below this count as dark features.
    pub dark_threshold: f64,
    pub mouth_rows: (f64, f64),
    pub brow_rows: (f64, f64),
    pub weights: BTreeMap<EmotionLabel, FeatureWeights>,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        // one feature per emotion keeps each score a monotone function of
        // how far the expression has progressed
        let weights = [
            (EmotionLabel::Angry, [0.0, 0.0, 0.0, -1.0]),
            (EmotionLabel::Disgust, [0.6, 0.0, 0.0, 0.0]),
            (EmotionLabel::Fear, [0.0, 0.0, 1.0, 0.0]),
            (EmotionLabel::Happy, [1.0, 0.0, 0.0, 0.0]),
            (EmotionLabel::Sad, [0.0, 1.0, 0.0, 0.0]),
            (EmotionLabel::Surprise, [0.0, 0.0, 0.0, 1.0]),
        ]
        .into_iter()
        .collect();
        Self {
            a: 1.0,
            b: 40.0,
            offset: -1.0,
            dark_threshold: 0.3,
            mouth_rows: (0.55, 0.95),
            brow_rows: (0.14, 0.5),
            weights,
        }
    }
}

/// Image-space classifier built from dark-feature geometry.
///
/// Each image half yields four features from the extremes of its dark
/// pixels: how high the top edge of the lips sits, how low their bottom edge
/// sits, how wide they are, and how high the top edge of the brows sits. Extremes of a
/// feature whose outline moves linearly with the expression scale move
/// linearly too, so every default score is monotone along an expression. An
/// emotion's expression score is the larger of its two per-half scores,
/// which makes it unchanged when the image is mirrored. The logit subtracts
/// `b` times the mean luma difference between the image and its mirror:
///
/// `activation = σ(a·max(score_left, score_right) + offset − b·asymmetry)`.
pub struct GeometricClassifier {
    info: ClassifierInfo,
    config: GeometricConfig,
}

/// Features of one image half, in tenths of the image height or half width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfFeatures {
    /// Top edge of the lips above the middle of the mouth band.
    pub mouth_lift: f64,
    /// Bottom edge of the lips below the middle of the mouth band.
    pub mouth_drop: f64,
    /// Distance of the outermost lip pixel from the image center.
    pub mouth_width: f64,
    /// Top edge of the brows above the middle of the brow band.
    pub brow_lift: f64,
}

impl HalfFeatures {
    /// Weighted sum over the features with nonzero weight; `−∞` when one of
    /// them is missing.
    fn dot(&self, w: &FeatureWeights) -> f64 {
        let f = [self.mouth_lift, self.mouth_drop, self.mouth_width, self.brow_lift];
        let mut total = 0.0;
        for (wk, fk) in w.iter().zip(f) {
            if *wk == 0.0 {
                continue;
            }
            if fk.is_nan() {
                return f64::NEG_INFINITY;
            }
            total += wk * fk;
        }
        total
    }
}

pub fn geometric_fixture(config: GeometricConfig) -> GeometricClassifier {
    GeometricClassifier::new(config)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bounding box of the dark pixels in a band: rows and distance from the
/// image center, as `(top, bottom, outer)`.
struct DarkExtent {
    top: u32,
    bottom: u32,
    outer: u32,
}

impl GeometricClassifier {
    pub fn new(config: GeometricConfig) -> Self {
        let labels = config.weights.keys().copied().collect();
        Self { info: info("geometric", labels, Normalization::Logit), config }
    }

    pub fn config(&self) -> &GeometricConfig {
        &self.config
    }

    fn row_range(&self, rows: (f64, f64), height: u32) -> (u32, u32) {
        let h = f64::from(height);
        let lo = (rows.0 * h).floor().max(0.0) as u32;
        let hi = ((rows.1 * h).ceil() as u32).min(height);
        (lo, hi.max(lo))
    }

    /// Columns of one half paired with their distance from the center
    /// (1 for the columns next to it).
    fn half_columns(width: u32, right: bool) -> Vec<(u32, u32)> {
        let half = width / 2;
        if right {
            (width - half..width).map(|x| (x, x - (width - half) + 1)).collect()
        } else {
            (0..half).map(|x| (x, half - x)).collect()
        }
    }

    fn dark_extent(&self, image: &Image, rows: (u32, u32), cols: &[(u32, u32)]) -> Option<DarkExtent> {
        let mut extent: Option<DarkExtent> = None;
        for y in rows.0..rows.1 {
            for &(x, dist) in cols {
                if image.luminance(x, y) >= self.config.dark_threshold {
                    continue;
                }
                let e = extent.get_or_insert(DarkExtent { top: y, bottom: y, outer: dist });
                e.bottom = y;
                e.outer = e.outer.max(dist);
            }
        }
        extent
    }

    /// Features of the left (`right = false`) or right image half. Features
    /// of a band without dark pixels are NaN, and any emotion relying on
    /// them scores zero.
    pub fn half_features(&self, image: &Image, right: bool) -> HalfFeatures {
        let cols = Self::half_columns(image.width(), right);
        let h = f64::from(image.height());
        let half_w = f64::from((image.width() / 2).max(1));
        let mouth = self.row_range(self.config.mouth_rows, image.height());
        let brow = self.row_range(self.config.brow_rows, image.height());
        let middle = |(lo, hi): (u32, u32)| f64::from(lo + hi) / 2.0;
        let above = |band: (u32, u32), row: u32| 10.0 * (middle(band) - f64::from(row) - 0.5) / h;

        let (mouth_lift, mouth_drop, mouth_width) = match self.dark_extent(image, mouth, &cols) {
            Some(e) => (above(mouth, e.top), -above(mouth, e.bottom), 10.0 * f64::from(e.outer) / half_w),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let brow_lift = self.dark_extent(image, brow, &cols).map_or(f64::NAN, |e| above(brow, e.top));
        HalfFeatures { mouth_lift, mouth_drop, mouth_width, brow_lift }
    }

    /// Mean absolute luma difference between mirrored pixel pairs.
    pub fn asymmetry(image: &Image) -> f64 {
        let (w, h) = (image.width(), image.height());
        let half = w / 2;
        if half == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..half {
                total += (image.luminance(x, y) - image.luminance(w - 1 - x, y)).abs();
            }
        }
        total / (f64::from(half) * f64::from(h))
    }
}

impl Classifier for GeometricClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn classify(&self, image: &Image, _provenance: &Provenance) -> Result<Activation> {
        let left = self.half_features(image, false);
        let right = self.half_features(image, true);
        let asym = if self.config.b == 0.0 { 0.0 } else { Self::asymmetry(image) };
        let values = self
            .config
            .weights
            .iter()
            .map(|(&label, w)| {
                let expr = left.dot(w).max(right.dot(w));
                (label, sigmoid(self.config.a * expr + self.config.offset - self.config.b * asym))
            })
            .collect();
        Activation::new(values, Normalization::Logit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::{evaluate_geometry, sample_individual, FaceModel};
    use crate::render::{render, RenderSettings};

    fn face_image(expr: &[f64], s: f64, seed: u64) -> Image {
        let m = FaceModel::builtin();
        let ind = sample_individual(&m, seed);
        let v = evaluate_geometry(&m, &ind, expr, s, 1.0).unwrap();
        let colors = m.vertex_colors(&ind.appearance).unwrap();
        render(&v, m.faces(), Some(&colors), &RenderSettings::default().with_size(96, 96)).unwrap()
    }

    #[test]
    fn constant_ignores_image() {
        let c = ConstantClassifier::uniform(0.3);
        let a = c.classify(&Image::filled(4, 4, [0; 3]), &Provenance::none()).unwrap();
        let b = c.classify(&Image::filled(9, 2, [255; 3]), &Provenance::at(0.1, 0.2, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(EmotionLabel::Fear).unwrap(), 0.3);
    }

    #[test]
    fn softmax_contract_enforced() {
        let ok: BTreeMap<_, _> = [(EmotionLabel::Happy, 0.25), (EmotionLabel::Sad, 0.75)].into_iter().collect();
        let c = ConstantClassifier::new(ok, Normalization::Softmax).unwrap();
        let sum: f64 = c.classify(&Image::filled(1, 1, [0; 3]), &Provenance::none()).unwrap().values.values().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
        let bad: BTreeMap<_, _> = [(EmotionLabel::Happy, 0.5), (EmotionLabel::Sad, 0.6)].into_iter().collect();
        assert!(ConstantClassifier::new(bad, Normalization::Softmax).is_err());
    }

    #[test]
    fn surface_reads_provenance() {
        let c = SurfaceClassifier::uniform(Surface::onset_times_symmetry());
        let img = Image::filled(2, 2, [0; 3]);
        assert_eq!(c.activation(&img, &Provenance::at(1.0, 1.0, 0), EmotionLabel::Happy).unwrap(), 1.0);
        assert_eq!(c.activation(&img, &Provenance::at(0.0, 0.5, 0), EmotionLabel::Happy).unwrap(), 0.25);
        assert!(c.classify(&img, &Provenance::none()).is_err());
    }

    #[test]
    fn symmetry_blind_without_penalty() {
        let c = geometric_fixture(GeometricConfig { b: 0.0, ..Default::default() });
        for s in [0.0, 0.4] {
            let img = face_image(&[3.0, 1.0, 2.0, 0.0], s, 1);
            assert_ne!(img, img.mirrored());
            let a = c.classify(&img, &Provenance::none()).unwrap();
            let b = c.classify(&img.mirrored(), &Provenance::none()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mirror_symmetric_image_has_no_asymmetry() {
        let img = face_image(&[2.0, -1.0, 1.0, 0.5], 1.0, 2);
        assert_eq!(GeometricClassifier::asymmetry(&img), 0.0);
        let with_b = geometric_fixture(GeometricConfig::default());
        let without = geometric_fixture(GeometricConfig { b: 0.0, ..Default::default() });
        assert_eq!(
            with_b.classify(&img, &Provenance::none()).unwrap(),
            without.classify(&img, &Provenance::none()).unwrap()
        );
    }

    #[test]
    fn asymmetric_image_scores_below_symmetrized_average() {
        let img = face_image(&[3.0, 0.0, 0.0, 0.0], 0.0, 3);
        // average of the image and its mirror, channel by channel
        let mir = img.mirrored();
        let avg: Vec<u8> = img
            .as_bytes()
            .iter()
            .zip(mir.as_bytes())
            .map(|(&a, &b)| ((u16::from(a) + u16::from(b)) / 2) as u8)
            .collect();
        let avg = Image::new(img.width(), img.height(), avg).unwrap();
        // integer halving can leave a few odd pairs one level apart
        assert!(GeometricClassifier::asymmetry(&avg) < 0.1 * GeometricClassifier::asymmetry(&img));
        // the expression term of the ghosted average can differ either way,
        // so the comparison isolates the penalty
        for cfg in [
            GeometricConfig { a: 0.0, ..Default::default() },
            GeometricConfig { a: 0.0, b: 1.0, offset: 0.0, ..Default::default() },
        ] {
            let c = geometric_fixture(cfg);
            let asym = c.classify(&img, &Provenance::none()).unwrap();
            let sym = c.classify(&avg, &Provenance::none()).unwrap();
            for (label, v) in &asym.values {
                assert!(*v < sym.values[label], "{label}: {v} vs {}", sym.values[label]);
            }
        }
    }

    #[test]
    fn smile_lifts_mouth_feature() {
        let c = geometric_fixture(GeometricConfig::default());
        let neutral = c.half_features(&face_image(&[0.0; 4], 1.0, 0), false);
        let smile = c.half_features(&face_image(&[3.0, 0.0, 0.0, 0.0], 1.0, 0), false);
        let frown = c.half_features(&face_image(&[-3.0, 0.0, 0.0, 0.0], 1.0, 0), false);
        assert!(smile.mouth_lift > neutral.mouth_lift);
        // the lip middle stays put, so lowering the corners leaves the top edge
        assert_eq!(frown.mouth_lift, neutral.mouth_lift);
        assert!(frown.mouth_drop > neutral.mouth_drop);
        let open = c.half_features(&face_image(&[0.0, 0.0, 3.0, 0.0], 1.0, 0), false);
        assert!(open.mouth_drop > neutral.mouth_drop);
        let brows = c.half_features(&face_image(&[0.0, 3.0, 0.0, 0.0], 1.0, 0), false);
        assert!(brows.brow_lift > neutral.brow_lift);
        let wide = c.half_features(&face_image(&[0.0, 0.0, 0.0, 3.0], 1.0, 0), true);
        assert!(wide.mouth_width > neutral.mouth_width);
    }
}
