use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_expression, FaceModel};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};

/// One synthetic subject: identity and appearance draws, a pose, and the
/// target expression found for each emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualParams {
    pub identity: Vec<f64>,
    pub appearance: Vec<f64>,
    pub pose: Vec<f64>,
    #[serde(default)]
    pub expressions: BTreeMap<EmotionLabel, Vec<f64>>,
}

impl IndividualParams {
    /// The template subject: all parameters zero.
    pub fn neutral(model: &FaceModel) -> Self {
        Self {
            identity: vec![0.0; model.identity_dim()],
            appearance: vec![0.0; model.appearance_dim()],
            pose: vec![0.0; model.pose_dim()],
            expressions: BTreeMap::new(),
        }
    }

    pub(crate) fn check_dims(&self, model: &FaceModel) -> Result<()> {
        if self.identity.len() != model.identity_dim() || self.pose.len() != model.pose_dim() {
            return Err(Error::ParameterDomain(format!(
                "individual has {} identity / {} pose values, model expects {} / {}",
                self.identity.len(),
                self.pose.len(),
                model.identity_dim(),
                model.pose_dim()
            )));
        }
        Ok(())
    }

    /// Store an optimized expression, enforcing the coefficient bounds.
    pub fn set_expression(&mut self, model: &FaceModel, emotion: EmotionLabel, expr: Vec<f64>) -> Result<()> {
        check_expression(model, &expr)?;
        self.expressions.insert(emotion, expr);
        Ok(())
    }

    pub fn expression(&self, emotion: EmotionLabel) -> Result<&[f64]> {
        self.expressions
            .get(&emotion)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("no expression stored for {emotion}")))
    }
}

/// Draw identity and appearance i.i.d. standard normal from `seed`; pose is
/// zero and no expressions are set.
pub fn sample_individual(model: &FaceModel, seed: u64) -> IndividualParams {
    let mut rng = crate::seed::rng(seed);
    let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let identity = draw(model.identity_dim());
    let appearance = draw(model.appearance_dim());
    IndividualParams { identity, appearance, pose: vec![0.0; model.pose_dim()], expressions: BTreeMap::new() }
}
