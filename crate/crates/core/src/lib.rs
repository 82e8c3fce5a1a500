//! Causal symmetry auditing for facial expression classifiers.
//!
//! The crate renders synthetic faces whose left-side expression is scaled by
//! a symmetry scalar `s` while the expression onset `t` sweeps from neutral
//! to the target, feeds them to a black-box classifier, and measures how the
//! classifier's activation moves with `s`:
//!
//! * [`face`]: blendshape model, basis split, skinning, container format.
//! * [`render`]: z-buffered flat-shaded rasterizer.
//! * [`classify`]: classifier trait, analytic fixtures, wire-protocol bridge client.
//! * [`evolution`]: differential evolution and target-expression search.
//! * [`probe`]: intervention grids, ∂/∂s stencils, impact scores, occlusion saliency.
//! * [`stats`]: permutation test, Holm-Bonferroni, conditional-independence battery.

// `!(x > lo)` is how NaN parameters get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod emotion;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod face;
pub mod probe;
pub mod render;
pub mod seed;
pub mod stats;

pub use emotion::EmotionLabel;
pub use error::{Error, Result};
