//! Black-box expression classifiers.
//!
//! Anything that maps an [`Image`] to per-emotion activations implements
//! [`Classifier`]. Three kinds ship here: analytic fixtures used as test
//! oracles ([`fixtures`]), a client for out-of-process models speaking the
//! newline-delimited JSON wire protocol ([`bridge`]), and a loopback server
//! for that protocol ([`loopback`]) together with a [`conformance`] suite
//! any server can be checked against.
//!
//! Every request carries a [`Provenance`] sideband with the intervention
//! coordinates. Only fixtures may look at it; bridge adapters never send it.

pub mod bridge;
pub mod conformance;
pub mod fixtures;
pub mod loopback;
pub mod protocol;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::render::Image;

pub use bridge::{bridge_connect, BridgeClassifier, Endpoint};
pub use fixtures::{geometric_fixture, ConstantClassifier, GeometricClassifier, GeometricConfig, IntensityClassifier, Surface, SurfaceClassifier};

/// How an adapter's outputs are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Outputs are a probability vector.
    Softmax,
    /// Unnormalized per-class scores.
    Logit,
}

/// Per-label outputs of one classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub values: BTreeMap<EmotionLabel, f64>,
    pub normalization: Normalization,
}

impl Activation {
    pub fn new(values: BTreeMap<EmotionLabel, f64>, normalization: Normalization) -> Result<Self> {
        if let Some((l, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Protocol(format!("non-finite activation {v} for {l}")));
        }
        if normalization == Normalization::Softmax {
            let sum: f64 = values.values().sum();
            if values.values().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Protocol(format!("softmax activations sum to {sum}")));
            }
        }
        Ok(Self { values, normalization })
    }

    pub fn get(&self, label: EmotionLabel) -> Result<f64> {
        self.values.get(&label).copied().ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// Intervention coordinates attached to a request. Read only by fixtures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub individual: Option<u64>,
}

impl Provenance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(s: f64, t: f64, individual: u64) -> Self {
        Self { s: Some(s), t: Some(t), individual: Some(individual) }
    }
}

/// What an adapter declares about itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierInfo {
    pub name: String,
    pub labels: Vec<EmotionLabel>,
    /// Expected input size; images of another size are resized
    /// nearest-neighbor. `None` accepts any size.
    pub input_size: Option<(u32, u32)>,
    pub normalization: Normalization,
}

impl ClassifierInfo {
    pub fn declares(&self, label: EmotionLabel) -> bool {
        self.labels.contains(&label)
    }

    /// Resize `image` to the declared input size if needed.
    pub fn prepare(&self, image: &Image) -> Image {
        match self.input_size {
            Some((w, h)) if (w, h) != (image.width(), image.height()) => image.resize_nearest(w, h),
            _ => image.clone(),
        }
    }
}

pub trait Classifier: Send + Sync {
    fn info(&self) -> &ClassifierInfo;

    fn classify(&self, image: &Image, provenance: &Provenance) -> Result<Activation>;

    /// Activation for a single label.
    fn activation(&self, image: &Image, provenance: &Provenance, label: EmotionLabel) -> Result<f64> {
        self.classify(image, provenance)?.get(label)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn info(&self) -> &ClassifierInfo {
        (**self).info()
    }
    fn classify(&self, image: &Image, provenance: &Provenance) -> Result<Activation> {
        (**self).classify(image, provenance)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn info(&self) -> &ClassifierInfo {
        (**self).info()
    }
    fn classify(&self, image: &Image, provenance: &Provenance) -> Result<Activation> {
        (**self).classify(image, provenance)
    }
}

impl<C: Classifier + ?Sized> Classifier for std::sync::Arc<C> {
    fn info(&self) -> &ClassifierInfo {
        (**self).info()
    }
    fn classify(&self, image: &Image, provenance: &Provenance) -> Result<Activation> {
        (**self).classify(image, provenance)
    }
}

/// Wrapper counting how many classifications were requested.
pub struct CountingClassifier<C> {
    inner: C,
    calls: AtomicU64,
}

impl<C: Classifier> CountingClassifier<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: Classifier> Classifier for CountingClassifier<C> {
    fn info(&self) -> &ClassifierInfo {
        self.inner.info()
    }

    fn classify(&self, image: &Image, provenance: &Provenance) -> Result<Activation> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.classify(image, provenance)
    }
}
